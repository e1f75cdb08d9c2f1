"""Pipeline configuration with a plain ``section.key = value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .cvae import CvaeConfig
from .recognizer import GeinetConfig
from .silhouette import FrameGeometry
from .temporal_filter import BilstmConfig


@dataclass
class GeometryConfig:
    width: int = 64
    height: int = 64


@dataclass
class KeyposeConfig:
    k: int = 16
    pca_dim: int = 32
    tau_percentile: float = 95.0
    phase_window: int = 1
    max_iter: int = 100
    pca_max_frames: int = 2000


@dataclass
class SynthConfig:
    subjects: int = 20
    seqs: int = 5
    frames: int = 100
    period: int = 30
    noise_rate: float = 0.01
    probe_seqs: int = 2


@dataclass
class EvalConfig:
    bucket_edges: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    max_rank: int = 5
    k_values: tuple[int, ...] = (2, 3, 5, 10, 16)
    kfold_degree: float = 0.5
    max_tries: int = 200


@dataclass
class PipelineConfig:
    seed: int = 0
    window_len: int = 6
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    keypose: KeyposeConfig = field(default_factory=KeyposeConfig)
    cvae: CvaeConfig = field(default_factory=CvaeConfig)
    bilstm: BilstmConfig = field(default_factory=BilstmConfig)
    geinet: GeinetConfig = field(default_factory=GeinetConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        self.sync()

    def sync(self) -> "PipelineConfig":
        """Propagate shared values (K, d_z, seed) into the per-model sections."""
        self.cvae.k = self.keypose.k
        self.bilstm.d_z = self.cvae.d_z
        self.cvae.seed = self.seed
        self.bilstm.seed = self.seed
        self.geinet.seed = self.seed
        if self.window_len != 6:
            raise ValueError("window_len is fixed at 6")
        return self

    @property
    def frame_geometry(self) -> FrameGeometry:
        return FrameGeometry(width=self.geometry.width, height=self.geometry.height)

    def with_seed(self, seed: int) -> "PipelineConfig":
        cfg = copy_config(self)
        cfg.seed = int(seed)
        return cfg.sync()


_SECTIONS = ("geometry", "keypose", "cvae", "bilstm", "geinet", "synth", "evaluation")
_DERIVED = {("cvae", "k"), ("cvae", "seed"), ("bilstm", "d_z"), ("bilstm", "seed"), ("geinet", "seed")}


def copy_config(cfg: PipelineConfig) -> PipelineConfig:
    return PipelineConfig(**{
        f.name: (replace(getattr(cfg, f.name)) if dataclasses.is_dataclass(getattr(cfg, f.name))
                 else getattr(cfg, f.name))
        for f in fields(cfg)
    })


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    return str(value)


def _parse(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return text.lower() in ("true", "1", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [t for t in text.split(",") if t.strip()]
        kind = type(default[0]) if default else float
        return tuple(_parse(t, kind()) for t in items)
    return text


def dump_config(cfg: PipelineConfig) -> str:
    lines = [f"seed = {cfg.seed}", f"window_len = {cfg.window_len}"]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            if (section, f.name) in _DERIVED:
                continue
            lines.append(f"{section}.{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def save_config(cfg: PipelineConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg))
    return path


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = copy_config(base) if base is not None else PipelineConfig()
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ValueError(f"config line {n}: unknown section {section!r}")
            obj = getattr(cfg, section)
            if name not in {f.name for f in fields(obj)}:
                raise ValueError(f"config line {n}: unknown key {key!r}")
            setattr(obj, name, _parse(value, getattr(obj, name)))
        elif key in ("seed", "window_len"):
            setattr(cfg, key, int(value))
        else:
            raise ValueError(f"config line {n}: unknown key {key!r}")
    return cfg.sync()


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text())


def toy_config(seed: int = 0) -> PipelineConfig:
    """Small models that train in minutes on one CPU core.

    The KL weight is scaled down because the per-pixel-averaged
    reconstruction term is orders of magnitude smaller than the summed KL
    term; at 0.5 the encoder ignores its input entirely.
    """
    cfg = PipelineConfig(seed=seed)
    cfg.cvae = CvaeConfig(d_z=16, channels=(16, 32, 64), cond_width=32, hidden=128,
                          lambda1=1.0, lambda2=1e-3, epochs=15, lr=2e-3, batch_size=64,
                          max_frames=2000)
    cfg.bilstm = BilstmConfig(hidden=64, out_hidden=64, epochs=30, lr=2e-3, batch_size=128)
    cfg.geinet = GeinetConfig(epochs=50, lr=1e-3, batch_size=16)
    cfg.keypose = KeyposeConfig(pca_max_frames=1000)
    return cfg.sync()
