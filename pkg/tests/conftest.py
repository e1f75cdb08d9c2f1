import numpy as np
import pytest
import torch

from gaitrecon.config import toy_config
from gaitrecon.pipeline import train_pipeline
from gaitrecon.silhouette import SyntheticWalkerParams, generate_synthetic_walker, synthetic_corpus

torch.set_num_threads(1)

N_SUBJECTS = 20
SEQS = 5
PROBE_SEQS = 2


class ToyRun:
    """Toy pipeline trained once per session, plus its held-out probes."""

    def __init__(self):
        self.cfg = toy_config(seed=0)
        corpus = synthetic_corpus(N_SUBJECTS, SEQS, 100, seed=1, noise_rate=0.01)
        self.train = [s for i, s in enumerate(corpus) if i % SEQS < SEQS - PROBE_SEQS]
        self.probes = [s for i, s in enumerate(corpus) if i % SEQS >= SEQS - PROBE_SEQS]
        self.pipeline = train_pipeline(self.train, self.cfg)

    @property
    def keyposes(self):
        return self.pipeline.keyposes

    @property
    def cvae(self):
        return self.pipeline.cvae

    @property
    def bilstm(self):
        return self.pipeline.bilstm


@pytest.fixture(scope="session")
def toy():
    return ToyRun()


@pytest.fixture
def walker():
    params = SyntheticWalkerParams(period=30, limb_amplitude=18, torso_size=18)
    return generate_synthetic_walker(params, 60, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY_CONFIG = """\
seed = 3
keypose.k = 8
keypose.pca_dim = 8
cvae.d_z = 8
cvae.channels = 8,8,8
cvae.hidden = 32
cvae.lambda2 = 0.001
cvae.epochs = 2
cvae.lr = 0.002
bilstm.hidden = 16
bilstm.out_hidden = 16
bilstm.epochs = 2
bilstm.lr = 0.002
geinet.epochs = 3
geinet.lr = 0.001
synth.subjects = 4
synth.seqs = 3
synth.probe_seqs = 1
synth.frames = 40
evaluation.bucket_edges = 0,0.3,0.6
"""

# every stage of the CLI, in dependency order; {r} is the run root
CLI_STAGES = [
    "synth-data --out {r}/data",
    "build-keyposes --manifest {r}/data/gallery.txt --out {r}/models",
    "train-cvae --manifest {r}/data/gallery.txt --out {r}/models",
    "train-bilstm --manifest {r}/data/gallery.txt --out {r}/models",
    "train-geinet --manifest {r}/data/gallery.txt --out {r}/models",
    "label --manifest {r}/data/probe.txt --out {r}/labels --models {r}/models",
    "occlude --degree 0.5 --manifest {r}/data/probe.txt --out {r}/occ",
    "reconstruct --manifest {r}/occ/manifest.txt --ground-truth {r}/data/probe.txt --out {r}/rec --models {r}/models",
    "evaluate --manifest {r}/occ/manifest.txt --ground-truth {r}/data/probe.txt --out {r}/eval --models {r}/models",
    "sweep --manifest {r}/data/probe.txt --out {r}/sweep --models {r}/models",
    "kfold --manifest {r}/data/manifest.txt --k-values 2,3 --out {r}/kfold --models {r}/models",
]


def run_cli_pipeline(root, config_path) -> list[int]:
    from gaitrecon.cli import run_command

    codes = []
    for stage in CLI_STAGES:
        argv = stage.format(r=root).split() + ["--config", str(config_path)]
        codes.append(run_command(argv))
    return codes


@pytest.fixture(scope="session")
def tiny_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture(scope="session")
def cli_run(tmp_path_factory, tiny_config_path):
    root = tmp_path_factory.mktemp("cli_a")
    codes = run_cli_pipeline(root, tiny_config_path)
    return root, codes


# acceptance criterion number -> reported line
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Reporter for the criterion named by the test (``test_cNN_...``); records a PASS/FAIL line and asserts."""
    number = int(request.node.name.split("_")[1][1:])
    ACCEPTANCE_LINES[number] = f"FAIL [{number:2d}] {request.node.name}: raised before its check"

    def report(title: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
