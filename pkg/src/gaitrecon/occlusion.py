"""Bernoulli frame dropping, in latent space and in image space."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DegreeOutOfRange, LengthMismatch
from .silhouette import GaitSequence, SilhouetteFrame


@dataclass(frozen=True)
class OcclusionMask:
    keep: np.ndarray
    degree: float
    seed: int

    @property
    def dropped(self) -> np.ndarray:
        return ~self.keep

    @property
    def drop_fraction(self) -> float:
        return float(self.dropped.mean())


def _check_degree(degree: float) -> None:
    if not 0.0 <= degree <= 1.0:
        raise DegreeOutOfRange(f"occlusion degree must lie in [0, 1], got {degree}")


def sample_mask(n: int, degree: float, seed: int) -> OcclusionMask:
    """Draw ``x_i ~ U(0, 1)`` and keep position ``i`` when ``x_i > degree``."""
    _check_degree(degree)
    if n < 1:
        raise ValueError("mask length must be >= 1")
    rng = np.random.default_rng(seed)
    # 1 - U[0, 1) lies in (0, 1], so degree 0 keeps everything and degree 1 drops everything
    x = 1.0 - rng.random(n)
    return OcclusionMask(keep=x > degree, degree=float(degree), seed=int(seed))


def apply_mask_latent(window: np.ndarray, mask: OcclusionMask) -> np.ndarray:
    """Zero the latent vectors at dropped positions.

    ``window`` has shape ``(..., L, d_z)``; ``mask.keep`` must have shape
    ``(..., L)``.
    """
    window = np.asarray(window)
    keep = np.asarray(mask.keep, dtype=bool)
    if keep.shape != window.shape[:-1]:
        raise LengthMismatch(f"mask shape {keep.shape} does not match window {window.shape[:-1]}")
    return np.where(keep[..., None], window, np.zeros((), dtype=window.dtype))


def occlude_sequence(seq: GaitSequence, degree: float, seed: int) -> GaitSequence:
    """Blank whole frames; kept frames are the very same objects as in ``seq``."""
    mask = sample_mask(len(seq), degree, seed)
    geometry = seq.geometry
    frames = [f if k else SilhouetteFrame.placeholder(geometry) for f, k in zip(seq.frames, mask.keep)]
    return replace(seq, frames=frames)


def write_mask(mask: OcclusionMask, path) -> Path:
    """One line of 0/1 characters, 1 marking a kept frame."""
    path = Path(path)
    path.write_text("".join("1" if k else "0" for k in np.ravel(mask.keep)) + "\n")
    return path


def read_mask(path, degree: float = float("nan"), seed: int = -1) -> OcclusionMask:
    bits = Path(path).read_text().strip()
    return OcclusionMask(keep=np.array([c == "1" for c in bits], dtype=bool), degree=degree, seed=seed)
