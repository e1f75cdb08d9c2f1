"""Command-line driver: one subcommand per pipeline stage.

Every command reads ``--config`` (``section.key = value`` text) and
``--seed``, writes under ``--out`` and stores checkpoints in the model
directory (``--models``, else ``$GOL_CACHE``, else ``--out``).
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import evaluation as ev
from .config import PipelineConfig, load_config, save_config, toy_config
from .cvae import load_cvae, save_cvae, train_cvae, write_loss_log
from .errors import GaitError, UnknownCommand
from .keypose import export_keypose_images, load_keyposes, save_keyposes, write_keypose_report
from .occlusion import sample_mask, write_mask
from .pipeline import Pipeline, fit_keyposes, labelled_frames, latent_sequences, thin
from .pose_graph import label_sequence, write_assignment
from .recognizer import (classify, compute_gei, load_geinet, save_gei_image, save_geinet, train_geinet,
                         write_predictions, write_training_log)
from .silhouette import (GaitSequence, ManifestEntry, SilhouetteFrame, estimate_phases, load_sequence,
                         read_manifest, save_sequence, synthetic_corpus, write_manifest)
from .temporal_filter import load_bilstm, make_training_windows, save_bilstm, train_bilstm

COMMANDS = ("synth-data", "build-keyposes", "train-cvae", "train-bilstm", "train-geinet", "label",
            "occlude", "reconstruct", "evaluate", "sweep", "kfold")
JOB_COMMANDS = ("label", "reconstruct", "evaluate")

KEYPOSE_FILE = "keyposes.ckpt"
CVAE_FILE = "cvae.ckpt"
BILSTM_FILE = "bilstm.ckpt"
GEINET_FILE = "geinet.ckpt"

USAGE = "usage: gaitrecon <command> [options]\ncommands: " + ", ".join(COMMANDS) + "\n"


# -- argument parsing --------------------------------------------------------

def _parser(command: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=f"gaitrecon {command}")
    p.add_argument("--config", help="config file (section.key = value lines)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")
    p.add_argument("--toy", action="store_true", help="start from the small desk-scale config")
    p.add_argument("--out", required=True, help="output root")
    p.add_argument("--models", help="checkpoint directory (default: $GOL_CACHE or --out)")
    if command in JOB_COMMANDS:
        p.add_argument("--jobs", type=int, default=1, help="per-sequence worker threads")
    if command == "synth-data":
        p.add_argument("--subjects", type=int)
        p.add_argument("--seqs", type=int, help="sequences per subject")
        p.add_argument("--frames", type=int)
        p.add_argument("--probe-seqs", type=int, help="trailing sequences per subject held out as probes")
    else:
        p.add_argument("--manifest", required=True, help="sequence manifest to process")
    if command == "occlude":
        p.add_argument("--degree", type=float, required=True)
    if command in ("reconstruct", "evaluate", "sweep"):
        p.add_argument("--ground-truth", help="manifest of the unoccluded sequences, matched by id")
    if command == "evaluate":
        p.add_argument("--no-reconstruct", action="store_true", help="classify the input as is")
    if command == "kfold":
        p.add_argument("--k-values", help="comma-separated fold counts")
        p.add_argument("--degree", type=float, help="occlusion applied to each test fold")
    return p


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else (toy_config() if args.toy else PipelineConfig())
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg.sync()


def _models_dir(args) -> Path:
    if args.models:
        return Path(args.models)
    if os.environ.get("GOL_CACHE"):
        return Path(os.environ["GOL_CACHE"])
    return Path(args.out)


# -- shared helpers ------------------------------------------------------------

def _load_manifest(path, cfg: PipelineConfig) -> list[GaitSequence]:
    sequences = []
    for entry in read_manifest(path):
        seq = load_sequence(entry.path, cfg.frame_geometry)
        seq = replace(seq, subject_label=entry.subject_label, sequence_id=entry.sequence_id)
        sequences.append(seq)
    return sequences


def _with_phases(sequences: list[GaitSequence]) -> list[GaitSequence]:
    return [s if s.phases is not None else replace(s, phases=estimate_phases(s)) for s in sequences]


def _sub_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _pipeline(models: Path, need_geinet: bool = True) -> Pipeline:
    return Pipeline(load_keyposes(models / KEYPOSE_FILE), load_cvae(models / CVAE_FILE),
                    load_bilstm(models / BILSTM_FILE),
                    load_geinet(models / GEINET_FILE) if need_geinet else None)


def _ground_truth(args, cfg) -> dict[str, GaitSequence]:
    if not getattr(args, "ground_truth", None):
        return {}
    return {s.sequence_id: s for s in _load_manifest(args.ground_truth, cfg)}


def _write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


# -- commands ---------------------------------------------------------------------

def cmd_synth_data(args, cfg: PipelineConfig, out: Path) -> None:
    s = cfg.synth
    subjects = args.subjects if args.subjects is not None else s.subjects
    seqs = args.seqs if args.seqs is not None else s.seqs
    frames = args.frames if args.frames is not None else s.frames
    probe_seqs = args.probe_seqs if args.probe_seqs is not None else s.probe_seqs
    if not 0 <= probe_seqs < seqs:
        raise ValueError("probe-seqs must leave at least one gallery sequence per subject")
    corpus = synthetic_corpus(subjects, seqs, frames, seed=cfg.seed, geometry=cfg.frame_geometry,
                              period=s.period, noise_rate=s.noise_rate)
    entries, gallery, probes = [], [], []
    for i, seq in enumerate(corpus):
        save_sequence(seq, out / seq.sequence_id)
        entry = ManifestEntry(seq.sequence_id, seq.subject_label, seq.sequence_id)
        entries.append(entry)
        (probes if i % seqs >= seqs - probe_seqs else gallery).append(entry)
    write_manifest(entries, out / "manifest.txt")
    write_manifest(gallery, out / "gallery.txt")
    write_manifest(probes, out / "probe.txt")


def cmd_build_keyposes(args, cfg, out, models) -> None:
    sequences = _with_phases(_load_manifest(args.manifest, cfg))
    kp = fit_keyposes(sequences, cfg)
    save_keyposes(kp, models / KEYPOSE_FILE)
    write_keypose_report(kp, out / "keyposes_report.txt")
    export_keypose_images(kp, out / "keyposes")


def cmd_train_cvae(args, cfg, out, models) -> None:
    kp = load_keyposes(models / KEYPOSE_FILE)
    frames, conds = thin(*labelled_frames(_load_manifest(args.manifest, cfg), kp), cfg.cvae.max_frames)
    model = train_cvae(frames, conds, cfg.cvae, geometry=cfg.frame_geometry)
    save_cvae(model, models / CVAE_FILE)
    write_loss_log(model.history, out / "cvae_loss.csv")


def cmd_train_bilstm(args, cfg, out, models) -> None:
    kp = load_keyposes(models / KEYPOSE_FILE)
    cvae = load_cvae(models / CVAE_FILE)
    windows = make_training_windows(latent_sequences(_load_manifest(args.manifest, cfg), kp, cvae))
    model = train_bilstm(windows, cfg.bilstm.degree_schedule, replace(cfg.bilstm, d_z=cvae.d_z))
    save_bilstm(model, models / BILSTM_FILE)
    write_loss_log(model.history, out / "bilstm_loss.csv", columns=("epoch", "l_mse"))


def cmd_train_geinet(args, cfg, out, models) -> None:
    sequences = _load_manifest(args.manifest, cfg)
    geis = [compute_gei(s) for s in sequences]
    for g in geis:
        save_gei_image(g, out / "gei" / f"{g.source_sequence_id}.png")
    model = train_geinet([(g, g.subject_label) for g in geis], cfg.geinet)
    save_geinet(model, models / GEINET_FILE)
    write_training_log(model.history, out / "geinet_training.csv")


def cmd_label(args, cfg, out, models) -> None:
    kp = load_keyposes(models / KEYPOSE_FILE)
    sequences = _load_manifest(args.manifest, cfg)
    assignments = ev._map(lambda s: label_sequence(s, kp), sequences, args.jobs)
    rows = []
    for seq, pa in zip(sequences, assignments):
        write_assignment(pa, out / "labels" / f"{seq.sequence_id}.txt")
        rows.append([seq.sequence_id, len(pa), int(pa.occluded.sum()), f"{pa.total_cost:.6f}"])
    _write_rows(out / "label_summary.csv", ["sequence_id", "frames", "occlusion_labels", "total_cost"], rows)


def cmd_occlude(args, cfg, out, models) -> None:
    entries = []
    rows = []
    for i, seq in enumerate(_load_manifest(args.manifest, cfg)):
        mask = sample_mask(len(seq), args.degree, _sub_seed(cfg.seed, i))
        frames = [f if keep else SilhouetteFrame.placeholder(seq.geometry) for f, keep in zip(seq.frames, mask.keep)]
        save_sequence(replace(seq, frames=frames), out / seq.sequence_id)
        write_mask(mask, out / seq.sequence_id / "mask.txt")
        entries.append(ManifestEntry(seq.sequence_id, seq.subject_label, seq.sequence_id))
        rows.append([seq.sequence_id, f"{mask.drop_fraction:.4f}"])
    write_manifest(entries, out / "manifest.txt")
    _write_rows(out / "occlusion_summary.csv", ["sequence_id", "realized_degree"], rows)


def cmd_reconstruct(args, cfg, out, models) -> None:
    pipe = _pipeline(models, need_geinet=False)
    truth = _ground_truth(args, cfg)
    sequences = _load_manifest(args.manifest, cfg)
    results = ev._map(pipe.reconstruct, sequences, args.jobs)
    entries = []
    for seq, rec in zip(sequences, results):
        save_sequence(rec.sequence, out / seq.sequence_id)
        entries.append(ManifestEntry(seq.sequence_id, seq.subject_label, seq.sequence_id))
        gt = truth.get(seq.sequence_id)
        rows = []
        for i in range(len(seq)):
            dice = "" if gt is None else f"{ev.dice_score(gt.frames[i], rec.sequence.frames[i]):.6f}"
            rows.append([i, int(rec.occluded[i]), int(rec.condition_states[i]), dice])
        _write_rows(out / seq.sequence_id / "report.csv",
                    ["frame", "was_occluded", "condition_state", "dice_vs_groundtruth"], rows)
    write_manifest(entries, out / "manifest.txt")


def cmd_evaluate(args, cfg, out, models) -> None:
    pipe = _pipeline(models)
    truth = _ground_truth(args, cfg)
    sequences = _load_manifest(args.manifest, cfg)

    def run(seq):
        degree = float(seq.placeholder_mask.mean())
        return ev.evaluate_sequence(pipe, seq, seq.subject_label, degree, ground_truth=truth.get(seq.sequence_id),
                                    reconstruct=not args.no_reconstruct)

    records = ev._map(run, sequences, args.jobs)
    write_predictions([(r.sequence_id, r.ranked) for r in records], out / "predictions.csv")
    ev.write_records(records, out / "records.csv")
    curve = ev.cmc_curve(records, min(cfg.evaluation.max_rank, len(pipe.geinet.class_labels)))
    ev.write_cmc(curve, out / "cmc.csv")
    ev.plot_cmc(curve, out / "cmc.png")
    dices = [r.reconstruction_dice for r in records if r.reconstruction_dice is not None]
    _write_rows(out / "summary.csv", ["n_probes", "rank1", "mean_degree", "mean_dice", "errors"],
                [[len(records), f"{curve[0][1]:.4f}", f"{np.mean([r.occlusion_degree for r in records]):.4f}",
                  f"{np.mean(dices):.6f}" if dices else "", sum(r.error is not None for r in records)]])


def cmd_sweep(args, cfg, out, models) -> None:
    pipe = _pipeline(models)
    probes = _load_manifest(args.manifest, cfg)
    report = ev.occlusion_sweep(probes, pipe, cfg.evaluation.bucket_edges, seed=cfg.seed,
                                max_tries=cfg.evaluation.max_tries)
    ev.write_sweep(report, out / "sweep.csv")
    ev.write_records(report.records, out / "sweep_records.csv")
    ev.plot_sweep(report, out / "sweep.png")


def cmd_kfold(args, cfg, out, models) -> None:
    pipe = _pipeline(models, need_geinet=False)
    sequences = _load_manifest(args.manifest, cfg)
    labels = [s.subject_label for s in sequences]
    k_values = (tuple(int(k) for k in args.k_values.split(",")) if args.k_values
                else cfg.evaluation.k_values)
    degree = cfg.evaluation.kfold_degree if args.degree is None else args.degree
    geis = [compute_gei(s) for s in sequences]
    probes = []
    for i, seq in enumerate(sequences):
        if degree > 0:
            mask = sample_mask(len(seq), degree, _sub_seed(cfg.seed, i))
            seq = pipe.reconstruct(replace(seq, frames=[f if k else SilhouetteFrame.placeholder(seq.geometry)
                                                         for f, k in zip(seq.frames, mask.keep)])).sequence
        probes.append(seq)
    probe_geis = [compute_gei(s) for s in probes]

    def evaluate_fold(train_idx, test_idx):
        model = train_geinet([(geis[i], labels[i]) for i in train_idx], cfg.geinet)
        hits = [classify(probe_geis[i], model)[0][0] == labels[i] for i in test_idx]
        return 100.0 * float(np.mean(hits))

    results = ev.kfold_robustness(labels, k_values, evaluate_fold, seed=cfg.seed)
    ev.write_kfold(results, out / "kfold.csv")
    ev.write_kfold_summary(results, out / "kfold_summary.csv")
    ev.plot_kfold(results, out / "kfold.png")


HANDLERS = {
    "build-keyposes": cmd_build_keyposes, "train-cvae": cmd_train_cvae, "train-bilstm": cmd_train_bilstm,
    "train-geinet": cmd_train_geinet, "label": cmd_label, "occlude": cmd_occlude,
    "reconstruct": cmd_reconstruct, "evaluate": cmd_evaluate, "sweep": cmd_sweep, "kfold": cmd_kfold,
}


def _error_line(exc: BaseException) -> str:
    module = getattr(exc, "module", None) or "cli"
    message = " ".join(str(exc).split()) or type(exc).__name__
    return f"error module={module} kind={type(exc).__name__} message={message}"


def run_command(argv) -> int:
    """Run one subcommand; returns the process exit status."""
    argv = list(argv)
    if not argv or argv[0] not in COMMANDS:
        if argv and argv[0] in ("-h", "--help"):
            sys.stdout.write(USAGE)
            return 0
        exc = UnknownCommand(f"unknown command {argv[0]!r}" if argv else "no command given")
        sys.stderr.write(USAGE + _error_line(exc) + "\n")
        return 2
    command = argv[0]
    try:
        args = _parser(command).parse_args(argv[1:])
    except SystemExit as exc:
        return int(exc.code or 0)
    torch.set_num_threads(1)
    start = time.perf_counter()
    try:
        cfg = _resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out / "config_used.txt")
        if command == "synth-data":
            cmd_synth_data(args, cfg, out)
        else:
            models = _models_dir(args)
            models.mkdir(parents=True, exist_ok=True)
            HANDLERS[command](args, cfg, out, models)
    except (GaitError, ValueError, OSError) as exc:
        sys.stderr.write(_error_line(exc) + "\n")
        return 1
    # timings go to stderr only, so reports stay byte-reproducible
    sys.stderr.write(f"done command={command} seconds={time.perf_counter() - start:.2f}\n")
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
