"""Bidirectional LSTM filter over six-frame latent windows, and sequence reconstruction.

A latent window is an array of shape ``(WINDOW_LEN, d_z)``; batches stack
windows along a leading axis.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .cvae import CvaeModel, condition_matrix
from .errors import AllFramesOccluded, DimensionMismatch, EmptyCorpus, LengthMismatch, SequenceTooShort
from .occlusion import apply_mask_latent, sample_mask
from .pose_graph import PoseAssignment
from .silhouette import GaitSequence, SilhouetteFrame

WINDOW_LEN = 6
MODEL_VERSION = 1


@dataclass
class BilstmConfig:
    d_z: int = 64
    hidden: int = 256
    out_hidden: int = 256
    epochs: int = 100
    lr: float = 0.01
    batch_size: int = 128
    degree_schedule: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7)
    freeze_masks: bool = False
    seed: int = 0


class BilstmNet(nn.Module):
    """Three stacked bidirectional LSTMs, one forward LSTM, per-step linear read-out."""

    def __init__(self, cfg: BilstmConfig):
        super().__init__()
        self.bi = nn.LSTM(cfg.d_z, cfg.hidden, num_layers=3, bidirectional=True, batch_first=True)
        self.out_lstm = nn.LSTM(2 * cfg.hidden, cfg.out_hidden, batch_first=True)
        self.proj = nn.Linear(cfg.out_hidden, cfg.d_z)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h, _ = self.bi(z)
        h, _ = self.out_lstm(h)
        return self.proj(h)


@dataclass
class BilstmModel:
    config: BilstmConfig
    net: BilstmNet
    history: list[dict] = field(default_factory=list)

    @property
    def d_z(self) -> int:
        return self.config.d_z


def filter_window(w, model: BilstmModel) -> np.ndarray:
    """Run the filter on one ``(6, d_z)`` window or a ``(n, 6, d_z)`` batch."""
    w = np.asarray(w, dtype=np.float32)
    single = w.ndim == 2
    batch = w[None] if single else w
    if batch.ndim != 3 or batch.shape[1] != WINDOW_LEN:
        raise DimensionMismatch(f"windows must have shape (n, {WINDOW_LEN}, d_z), got {w.shape}",
                                module="temporal_filter")
    if batch.shape[2] != model.d_z:
        raise DimensionMismatch(f"latent width {batch.shape[2]} does not match d_z={model.d_z}",
                                module="temporal_filter")
    model.net.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(batch), 512):
            out.append(model.net(torch.from_numpy(batch[lo:lo + 512])).numpy())
    res = np.concatenate(out) if out else np.empty_like(batch)
    return res[0] if single else res


def make_training_windows(latent_sequences) -> np.ndarray:
    """All stride-1 windows of every sequence: ``N - 5`` per sequence of length ``N``.

    Sequences shorter than the window are skipped with a warning.
    """
    windows = []
    skipped = []
    for i, seq in enumerate(latent_sequences):
        seq = np.asarray(seq, dtype=np.float32)
        if len(seq) < WINDOW_LEN:
            skipped.append(i)
            continue
        view = np.lib.stride_tricks.sliding_window_view(seq, WINDOW_LEN, axis=0)
        windows.append(np.moveaxis(view, -1, 1))
    if skipped:
        warnings.warn(f"skipped {len(skipped)} sequence(s) shorter than {WINDOW_LEN} frames: {skipped}",
                      stacklevel=2)
    if not windows:
        raise SequenceTooShort(f"no sequence has {WINDOW_LEN} or more frames")
    return np.ascontiguousarray(np.concatenate(windows))


def window_mse(z_hat, z) -> float:
    """Mean over windows of the summed squared error across positions and dimensions."""
    diff = np.asarray(z_hat, dtype=np.float64) - np.asarray(z, dtype=np.float64)
    return float((diff ** 2).reshape(len(diff), -1).sum(axis=1).mean())


def _batch_seed(seed: int, epoch: int, batch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, batch]).generate_state(1)[0])


def train_bilstm(windows, degree_schedule=None, config: BilstmConfig | None = None,
                 val_windows=None, verbose: bool = False) -> BilstmModel:
    """Denoising training: masked windows in, clean windows as the target.

    Batch ``b`` uses occlusion degree ``degree_schedule[b % len]`` with a
    fresh Bernoulli mask each epoch (the same masks every epoch when
    ``freeze_masks`` is set).
    """
    config = config or BilstmConfig()
    if degree_schedule is None:
        degree_schedule = config.degree_schedule
    degree_schedule = tuple(float(d) for d in degree_schedule)
    config = replace(config, degree_schedule=degree_schedule)
    windows = np.asarray(windows, dtype=np.float32)
    if len(windows) == 0:
        raise EmptyCorpus("no latent windows to train on", module="temporal_filter")
    if windows.shape[1:] != (WINDOW_LEN, config.d_z):
        raise DimensionMismatch(f"windows must have shape (n, {WINDOW_LEN}, {config.d_z})",
                                module="temporal_filter")
    torch.manual_seed(config.seed)
    net = BilstmNet(config)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    model = BilstmModel(config, net)
    for epoch in range(1, config.epochs + 1):
        net.train()
        order = rng.permutation(len(windows))
        total = 0.0
        for b, lo in enumerate(range(0, len(order), config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            z = windows[idx]
            degree = degree_schedule[b % len(degree_schedule)]
            mask_epoch = 1 if config.freeze_masks else epoch
            mask = sample_mask(z.shape[0] * WINDOW_LEN, degree, _batch_seed(config.seed, mask_epoch, b))
            mask = replace(mask, keep=mask.keep.reshape(z.shape[0], WINDOW_LEN))
            z_occ = torch.from_numpy(apply_mask_latent(z, mask))
            target = torch.from_numpy(z)
            loss = ((net(z_occ) - target) ** 2).sum(dim=(1, 2)).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        row = {"epoch": epoch, "l_mse": total / len(order)}
        if val_windows is not None:
            row["val_mse"] = window_mse(filter_window(val_windows, model), val_windows)
        model.history.append(row)
        if verbose:
            print(json.dumps(row))
    net.eval()
    return model


def save_bilstm(model: BilstmModel, path) -> Path:
    cfg = asdict(model.config)
    cfg["degree_schedule"] = list(cfg["degree_schedule"])
    meta = {"model_version": MODEL_VERSION, "config": cfg, "window_len": WINDOW_LEN}
    arrays = {name: t.detach().numpy() for name, t in model.net.state_dict().items()}
    return save_checkpoint(path, "bilstm", meta, arrays)


def load_bilstm(path) -> BilstmModel:
    meta, arrays = load_checkpoint(path, "bilstm")
    cfg = dict(meta["config"])
    cfg["degree_schedule"] = tuple(cfg["degree_schedule"])
    config = BilstmConfig(**cfg)
    net = BilstmNet(config)
    net.load_state_dict({name: torch.from_numpy(arr) for name, arr in arrays.items()})
    net.eval()
    return BilstmModel(config, net)


# -- reconstruction --------------------------------------------------------

def _cyclic_step(a: int, b: int, k: int) -> int:
    """Signed shortest move from state ``a`` to ``b`` on the K-cycle (0-based)."""
    d = (b - a) % k
    return d - k if d > k // 2 else d


def advance_rate(states: np.ndarray, known: np.ndarray, k: int, default: float) -> float:
    """Mean key-pose advance per frame over short gaps between labelled frames."""
    idx = np.flatnonzero(known)
    steps, spans = 0.0, 0
    for i0, i1 in zip(idx[:-1], idx[1:]):
        if i1 - i0 <= 3:
            steps += _cyclic_step(states[i0], states[i1], k)
            spans += i1 - i0
    if spans == 0:
        return default
    return max(steps / spans, 0.0)


def interpolate_states(pa: PoseAssignment, default_rate: float | None = None) -> np.ndarray:
    """Key-pose state (1..K) for every frame, filling occluded frames.

    Interior gaps are filled by linear phase interpolation between the
    neighbouring labelled frames, choosing the number of whole cycles that
    best matches the sequence's advance rate; leading and trailing gaps are
    extrapolated at that rate.
    """
    k = pa.k
    states = pa.states.astype(np.int64) - 1
    known = ~pa.occluded
    if not known.any():
        raise AllFramesOccluded("no labelled frame to anchor key-pose interpolation")
    rate = advance_rate(states, known, k, k / 30.0 if default_rate is None else default_rate)
    out = states.astype(np.float64)
    idx = np.flatnonzero(known)
    n = len(states)
    for i0, i1 in zip(idx[:-1], idx[1:]):
        gap = i1 - i0
        if gap <= 1:
            continue
        base = (states[i1] - states[i0]) % k
        cycles = max(0, int(round((rate * gap - base) / k)))
        total = base + cycles * k
        for i in range(i0 + 1, i1):
            out[i] = states[i0] + total * (i - i0) / gap
    for i in range(0, idx[0]):
        out[i] = states[idx[0]] - rate * (idx[0] - i)
    for i in range(idx[-1] + 1, n):
        out[i] = states[idx[-1]] + rate * (i - idx[-1])
    filled = np.mod(np.rint(out), k).astype(np.int64)
    filled[known] = states[known]
    return filled + 1


@dataclass
class Reconstruction:
    sequence: GaitSequence
    occluded: np.ndarray          # frames that were re-synthesised
    condition_states: np.ndarray  # 1-based state used to encode or decode each frame


def reconstruct(seq: GaitSequence, pa: PoseAssignment, cvae: CvaeModel, bilstm: BilstmModel) -> Reconstruction:
    n = len(seq)
    if len(pa) != n:
        raise LengthMismatch(f"assignment has {len(pa)} states for {n} frames", module="temporal_filter")
    if n < WINDOW_LEN:
        raise SequenceTooShort(f"sequence {seq.sequence_id!r} has {n} < {WINDOW_LEN} frames")
    occluded = pa.occluded.copy()
    if occluded.all():
        raise AllFramesOccluded(f"every frame of {seq.sequence_id!r} is occluded")
    if cvae.d_z != bilstm.d_z:
        raise DimensionMismatch("CVAE and filter latent widths differ", module="temporal_filter")
    states = interpolate_states(pa)
    if not occluded.any():
        return Reconstruction(replace(seq, frames=list(seq.frames)), occluded, pa.states.copy())

    k = cvae.k
    frames = seq.stack()
    enc_states = np.where(occluded, k + 1, pa.states)
    latents = np.zeros((n, cvae.d_z), dtype=np.float32)
    keep = ~occluded
    mu, _ = cvae.encode_batch(frames[keep], condition_matrix(enc_states[keep], k))
    latents[keep] = mu

    windows = make_training_windows([latents])
    filtered = filter_window(windows, bilstm)
    fused = np.zeros_like(latents)
    counts = np.zeros(n)
    for w in range(len(windows)):
        fused[w:w + WINDOW_LEN] += filtered[w]
        counts[w:w + WINDOW_LEN] += 1
    fused /= counts[:, None]

    occ_idx = np.flatnonzero(occluded)
    decoded = cvae.decode_batch(fused[occ_idx], condition_matrix(states[occ_idx], k))
    out = list(seq.frames)
    for j, img in zip(occ_idx, decoded):
        out[j] = SilhouetteFrame(img, is_occluded_placeholder=False)
    return Reconstruction(replace(seq, frames=out), occluded, np.where(occluded, states, pa.states))


def reconstruct_sequence(seq: GaitSequence, pa: PoseAssignment, cvae: CvaeModel,
                         bilstm: BilstmModel) -> GaitSequence:
    """Re-synthesise the frames ``pa`` marks occluded; all other frames pass through untouched."""
    return reconstruct(seq, pa, cvae, bilstm).sequence
