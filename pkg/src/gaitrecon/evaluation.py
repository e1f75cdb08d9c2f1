"""Dice, CMC, occlusion sweeps and stratified k-fold robustness."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyRecords, GaitError, GeometryMismatch, InsufficientPerClass
from .recognizer import classify, compute_gei
from .silhouette import SilhouetteFrame


def dice_score(f, f_hat) -> float:
    """2 * sum(F * F_hat) / (sum(F^2) + sum(F_hat^2)); two empty frames score 1."""
    a = f.pixels if isinstance(f, SilhouetteFrame) else np.asarray(f)
    b = f_hat.pixels if isinstance(f_hat, SilhouetteFrame) else np.asarray(f_hat)
    if a.shape != b.shape:
        raise GeometryMismatch(f"frame shapes differ: {a.shape} vs {b.shape}", module="evaluation")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    denom = float((a * a).sum() + (b * b).sum())
    if denom == 0.0:
        return 1.0
    return 2.0 * float((a * b).sum()) / denom


@dataclass
class EvalRecord:
    sequence_id: str
    true_label: str
    ranked: list[tuple[str, float]]
    occlusion_degree: float
    reconstruction_dice: float | None = None
    error: str | None = None

    def rank_of_truth(self) -> int | None:
        """1-based rank of the true label, ``None`` when absent."""
        for r, (label, _) in enumerate(self.ranked, start=1):
            if label == self.true_label:
                return r
        return None


def cmc_curve(records: Sequence[EvalRecord], max_rank: int = 5) -> list[tuple[int, float]]:
    """Percentage of records whose truth is within the top ``r``, for r = 1..max_rank."""
    if not records:
        raise EmptyRecords("no evaluation records")
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    ranks = [rec.rank_of_truth() for rec in records]
    n = len(records)
    return [(r, 100.0 * sum(1 for x in ranks if x is not None and x <= r) / n)
            for r in range(1, max_rank + 1)]


def rank1_accuracy(records: Sequence[EvalRecord]) -> float:
    return cmc_curve(records, 1)[0][1]


@dataclass
class SweepReport:
    edges: tuple[float, ...]
    rows: list[tuple[float, float, float, int]]   # (lo, hi, rank-1 %, probe count)
    baseline_accuracy: float | None = None
    records: list[EvalRecord] = field(default_factory=list, repr=False)

    def accuracies(self) -> list[float]:
        return [acc for _, _, acc, _ in self.rows]


def bucket_bounds(edges: Sequence[float]) -> list[tuple[float, float]]:
    """Consecutive edge pairs; a trailing edge below 1 adds a final bucket up to 1."""
    edges = [float(e) for e in edges]
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bucket edges must be strictly increasing")
    if edges[-1] < 1.0:
        edges = edges + [1.0]
    return list(zip(edges[:-1], edges[1:]))


def bucket_records(records: Sequence[EvalRecord], edges: Sequence[float]) -> SweepReport:
    """Aggregate records into buckets by their realised occlusion fraction."""
    bounds = bucket_bounds(edges)
    rows = []
    for i, (lo, hi) in enumerate(bounds):
        last = i == len(bounds) - 1
        members = [r for r in records
                   if lo <= r.occlusion_degree < hi or (last and r.occlusion_degree == hi == 1.0)]
        acc = rank1_accuracy(members) if members else float("nan")
        rows.append((lo, hi, acc, len(members)))
    return SweepReport(tuple(float(e) for e in edges), rows, records=list(records))


def _sub_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def occlude_in_bucket(seq, lo: float, hi: float, seed: int, max_tries: int = 200):
    """Occlude ``seq`` so its realised drop fraction lands in ``[lo, hi)``.

    Masks are drawn at the bucket midpoint with successive derived seeds; the
    last draw is returned if none lands inside within ``max_tries``.
    """
    from .occlusion import occlude_sequence

    degree = min(1.0, 0.5 * (lo + hi))
    occluded = None
    for t in range(max_tries):
        occluded = occlude_sequence(seq, degree, _sub_seed(seed, t))
        frac = float(occluded.placeholder_mask.mean())
        if lo <= frac < hi:
            break
    return occluded


def evaluate_sequence(pipeline, seq, true_label: str, degree: float, ground_truth=None,
                      reconstruct: bool = True) -> EvalRecord:
    """Run one probe through the pipeline, turning component errors into a tagged record."""
    try:
        if reconstruct:
            rec = pipeline.reconstruct(seq)
            out = rec.sequence
            dice = None
            if ground_truth is not None and rec.occluded.any():
                dice = float(np.mean([dice_score(ground_truth.frames[i], out.frames[i])
                                      for i in np.flatnonzero(rec.occluded)]))
        else:
            out, dice = seq, None
        ranked = classify(compute_gei(out), pipeline.geinet)
        return EvalRecord(seq.sequence_id, true_label, ranked, degree, dice)
    except GaitError as exc:
        return EvalRecord(seq.sequence_id, true_label, [], degree,
                          error=f"{exc.module}:{type(exc).__name__}:{exc}")


DEFAULT_EDGES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def _map(fn: Callable, items, jobs: int = 1) -> list:
    """Ordered map, threaded when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def occlusion_sweep(probes, pipeline, edges: Sequence[float] = DEFAULT_EDGES,
                    seed: int = 0, max_tries: int = 200, baseline: bool = True,
                    jobs: int = 1) -> SweepReport:
    """Rank-1 accuracy per occlusion bucket.

    Each probe is occluded once per bucket so that its realised fraction
    falls in that bucket, then labelled, reconstructed and classified.
    ``baseline`` adds the accuracy on the untouched probes.
    """
    probes = list(probes)
    tasks = []
    for b, (lo, hi) in enumerate(bucket_bounds(edges)):
        for j, seq in enumerate(probes):
            tasks.append((b, lo, hi, j, seq))

    def run(task):
        b, lo, hi, j, seq = task
        occluded = occlude_in_bucket(seq, lo, hi, _sub_seed(seed, b, j), max_tries)
        frac = float(occluded.placeholder_mask.mean())
        return evaluate_sequence(pipeline, occluded, seq.subject_label, frac, ground_truth=seq)

    records = _map(run, tasks, jobs)
    report = bucket_records(records, edges)
    if baseline:
        clean = _map(lambda s: evaluate_sequence(pipeline, s, s.subject_label, 0.0, reconstruct=False),
                     probes, jobs)
        report.baseline_accuracy = rank1_accuracy(clean)
    return report


@dataclass
class KFoldResult:
    k: int
    accuracies: list[float]
    training_fraction: float

    def quartiles(self) -> dict:
        a = np.asarray(self.accuracies, dtype=np.float64)
        q1, med, q3 = np.percentile(a, [25, 50, 75])
        return {"min": float(a.min()), "q1": float(q1), "median": float(med),
                "q3": float(q3), "max": float(a.max()), "mean": float(a.mean())}


def stratified_folds(labels: Sequence[str], k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """``k`` stratified (train, test) index splits; needs ``k`` samples per class."""
    from sklearn.model_selection import StratifiedKFold

    labels = np.asarray([str(x) for x in labels])
    if len(labels) == 0:
        raise InsufficientPerClass("empty corpus")
    _, counts = np.unique(labels, return_counts=True)
    if counts.min() < k:
        raise InsufficientPerClass(f"K={k} needs {k} samples per class, smallest class has {counts.min()}")
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    return [(train, test) for train, test in skf.split(np.zeros(len(labels)), labels)]


def kfold_robustness(labels: Sequence[str], k_values: Sequence[int],
                     evaluate_fold: Callable[[np.ndarray, np.ndarray], float],
                     seed: int = 0) -> list[KFoldResult]:
    """Stratified K-fold for every K in ``k_values``.

    ``evaluate_fold(train_idx, test_idx)`` trains on one side and returns
    the rank-1 accuracy (percent) on the other.
    """
    k_values = [int(k) for k in k_values]
    if any(k < 2 for k in k_values):
        raise ValueError("every K must be >= 2")
    _, counts = np.unique(np.asarray([str(x) for x in labels]), return_counts=True)
    if len(counts) == 0 or counts.min() < max(k_values):
        raise InsufficientPerClass(
            f"need {max(k_values)} samples per class, smallest class has {counts.min() if len(counts) else 0}")
    results = []
    for k in k_values:
        accs = [float(evaluate_fold(train, test)) for train, test in stratified_folds(labels, k, seed)]
        results.append(KFoldResult(k, accs, (k - 1) / k))
    return results


# reports

def _writer(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "w", newline="")
    return path, fh, csv.writer(fh, lineterminator="\n")


def write_cmc(curve, path) -> Path:
    path, fh, w = _writer(path)
    with fh:
        w.writerow(["rank", "accuracy"])
        for r, acc in curve:
            w.writerow([r, f"{acc:.4f}"])
    return path


def write_records(records: Sequence[EvalRecord], path) -> Path:
    """One row per probe: truth, top prediction, rank of truth, dice, error tag."""
    path, fh, w = _writer(path)
    with fh:
        w.writerow(["sequence_id", "true_label", "predicted", "rank_of_truth", "rank1_correct",
                    "occlusion_degree", "reconstruction_dice", "error"])
        for rec in records:
            rank = rec.rank_of_truth()
            w.writerow([rec.sequence_id, rec.true_label, rec.ranked[0][0] if rec.ranked else "",
                        "" if rank is None else rank, int(rank == 1), f"{rec.occlusion_degree:.4f}",
                        "" if rec.reconstruction_dice is None else f"{rec.reconstruction_dice:.6f}",
                        rec.error or ""])
    return path


def write_sweep(report: SweepReport, path) -> Path:
    path, fh, w = _writer(path)
    with fh:
        w.writerow(["bucket_lo", "bucket_hi", "rank1_accuracy", "n_probes"])
        if report.baseline_accuracy is not None:
            w.writerow(["unoccluded", "unoccluded", f"{report.baseline_accuracy:.4f}",
                        len({r.sequence_id for r in report.records})])
        for lo, hi, acc, n in report.rows:
            w.writerow([f"{lo:.2f}", f"{hi:.2f}", "" if np.isnan(acc) else f"{acc:.4f}", n])
    return path


def write_kfold(results: Sequence[KFoldResult], path) -> Path:
    path, fh, w = _writer(path)
    with fh:
        w.writerow(["k", "training_fraction", "fold", "accuracy"])
        for res in results:
            for i, acc in enumerate(res.accuracies, start=1):
                w.writerow([res.k, f"{res.training_fraction:.4f}", i, f"{acc:.4f}"])
    return path


def write_kfold_summary(results: Sequence[KFoldResult], path) -> Path:
    path, fh, w = _writer(path)
    with fh:
        w.writerow(["k", "training_fraction", "min", "q1", "median", "q3", "max", "mean"])
        for res in results:
            q = res.quartiles()
            w.writerow([res.k, f"{res.training_fraction:.4f}"] + [f"{q[c]:.4f}" for c in
                                                                   ("min", "q1", "median", "q3", "max", "mean")])
    return path


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_cmc(curve, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot([r for r, _ in curve], [a for _, a in curve], marker="o")
    ax.set_xlabel("rank")
    ax.set_ylabel("identification rate (%)")
    ax.set_ylim(0, 101)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_sweep(report: SweepReport, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3))
    names = [f"{lo * 100:.0f}-{hi * 100:.0f}" for lo, hi, _, _ in report.rows]
    ax.bar(names, [0 if np.isnan(a) else a for a in report.accuracies()])
    if report.baseline_accuracy is not None:
        ax.axhline(report.baseline_accuracy, color="k", ls="--", lw=1)
    ax.set_xlabel("occlusion (%)")
    ax.set_ylabel("rank-1 accuracy (%)")
    ax.set_ylim(0, 101)
    ax.tick_params(axis="x", labelrotation=45)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_kfold(results: Sequence[KFoldResult], path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.boxplot([r.accuracies for r in results])
    ax.set_xticks(range(1, len(results) + 1), [str(r.k) for r in results])
    ax.set_xlabel("K")
    ax.set_ylabel("rank-1 accuracy (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
