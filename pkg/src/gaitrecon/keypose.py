"""PCA subspace over aligned silhouettes and phase-ordered key poses."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DimTooLarge, GeometryMismatch, InsufficientData
from .silhouette import FrameGeometry, GaitSequence, SilhouetteFrame

DEFAULT_K = 16


@dataclass(frozen=True)
class PcaSubspace:
    mean_frame: np.ndarray   # (D,)
    basis: np.ndarray        # (d, D), orthonormal rows
    geometry: FrameGeometry
    explained_variance: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def _flatten(self, frames) -> tuple[np.ndarray, bool]:
        if isinstance(frames, SilhouetteFrame):
            frames = frames.pixels
        elif isinstance(frames, (list, tuple)) and frames and isinstance(frames[0], SilhouetteFrame):
            frames = np.stack([f.pixels for f in frames])
        arr = np.asarray(frames, dtype=np.float64)
        single = arr.ndim in (1, 2) and (arr.ndim == 1 or arr.shape == self.geometry.shape)
        if single:
            arr = arr.reshape(1, -1)
        else:
            arr = arr.reshape(arr.shape[0], -1)
        if arr.shape[1] != self.mean_frame.shape[0]:
            raise GeometryMismatch(
                f"frame size {arr.shape[1]} does not match subspace size {self.mean_frame.shape[0]}",
                module="keypose")
        return arr, single

    def project(self, frames) -> np.ndarray:
        """Frame(s) to subspace coordinates: (d,) for one frame, (N, d) for many."""
        arr, single = self._flatten(frames)
        coords = (arr - self.mean_frame) @ self.basis.T
        return coords[0] if single else coords

    def back_project(self, coords) -> np.ndarray:
        """Subspace coordinates back to (H, W) frame(s); values are not clipped."""
        coords = np.asarray(coords, dtype=np.float64)
        flat = coords @ self.basis + self.mean_frame
        return flat.reshape(coords.shape[:-1] + self.geometry.shape)


def _frame_matrix(frames) -> tuple[np.ndarray, FrameGeometry]:
    arrays = [f.pixels if isinstance(f, SilhouetteFrame) else np.asarray(f) for f in frames]
    if not arrays:
        raise InsufficientData("no frames to fit")
    geometry = FrameGeometry(width=arrays[0].shape[1], height=arrays[0].shape[0])
    return np.stack(arrays).reshape(len(arrays), -1).astype(np.float64), geometry


def fit_pca(frames, dim: int) -> PcaSubspace:
    """Top-``dim`` principal components of the mean-centred frames.

    Component signs are fixed so the largest-magnitude loading is positive,
    which makes the basis reproducible across LAPACK builds.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    X, geometry = _frame_matrix(frames)
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    tol = s.max(initial=0.0) * max(Xc.shape) * np.finfo(np.float64).eps
    rank = int((s > tol).sum())
    if dim > rank:
        raise DimTooLarge(f"requested {dim} components but the centred data has rank {rank}")
    basis = vt[:dim].copy()
    pivots = np.argmax(np.abs(basis), axis=1)
    signs = np.sign(basis[np.arange(dim), pivots])
    basis *= signs[:, None]
    variance = s[:dim] ** 2 / max(len(X) - 1, 1)
    return PcaSubspace(mean_frame=mean, basis=basis, geometry=geometry, explained_variance=variance)


@dataclass(frozen=True)
class KeyPoseSet:
    embeddings: np.ndarray        # (K, d), in temporal phase order
    subspace: PcaSubspace
    occlusion_threshold: float    # tau, cost of the occlusion state
    phase_means: np.ndarray       # (K,) circular mean phase of members
    member_counts: np.ndarray     # (K,)

    @property
    def k(self) -> int:
        return self.embeddings.shape[0]

    @property
    def geometry(self) -> FrameGeometry:
        return self.subspace.geometry

    def decoded_images(self) -> np.ndarray:
        """(K, H, W) back-projected key poses clipped to [0, 1]."""
        return np.clip(self.subspace.back_project(self.embeddings), 0.0, 1.0)

    def nearest(self, frames) -> np.ndarray:
        """0-based index of the nearest key pose for each frame."""
        coords = np.atleast_2d(self.subspace.project(frames))
        d = np.linalg.norm(coords[:, None, :] - self.embeddings[None], axis=2)
        return np.argmin(d, axis=1)


def _circular_mean(phases: np.ndarray) -> float:
    ang = 2.0 * np.pi * phases
    mean = np.arctan2(np.sin(ang).mean(), np.cos(ang).mean())
    return float((mean / (2.0 * np.pi)) % 1.0)


def _phase_bin_init(coords: np.ndarray, phases: np.ndarray, k: int) -> np.ndarray:
    bins = np.minimum((phases * k).astype(int), k - 1)
    centroids = np.empty((k, coords.shape[1]))
    for b in range(k):
        members = bins == b
        if members.any():
            centroids[b] = coords[members].mean(axis=0)
        else:
            centre = (b + 0.5) / k
            gap = np.abs(phases - centre)
            gap = np.minimum(gap, 1.0 - gap)
            centroids[b] = coords[np.argmin(gap)]
    return centroids


def _assign(coords: np.ndarray, centroids: np.ndarray,
            allowed: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    sq = (coords ** 2).sum(1)[:, None] - 2.0 * coords @ centroids.T + (centroids ** 2).sum(1)[None]
    if allowed is not None:
        sq = np.where(allowed, sq, np.inf)
    labels = np.argmin(sq, axis=1)
    dist = np.linalg.norm(coords - centroids[labels], axis=1)
    return labels, dist


def _phase_neighbourhood(phases: np.ndarray, k: int, window: int) -> np.ndarray:
    """(n, k) mask: cluster ``c`` is open to a frame whose phase bin is within ``window`` of ``c``."""
    bins = np.minimum((phases * k).astype(int), k - 1)
    gap = np.abs(bins[:, None] - np.arange(k)[None])
    gap = np.minimum(gap, k - gap)
    return gap <= window


def build_keyposes(sequences: list[GaitSequence], subspace: PcaSubspace, k: int = DEFAULT_K,
                   tau_percentile: float = 95.0, max_iter: int = 100,
                   phase_window: int | None = 1) -> KeyPoseSet:
    """Phase-constrained K-means in the PCA subspace.

    Centroids start from the mean embedding of ``k`` equal-width phase bins.
    During the Lloyd iterations a frame may only join a cluster whose initial
    bin lies within ``phase_window`` bins of its own phase bin (``None``
    lifts the constraint). Clusters are then sorted by the circular mean
    phase of their members. The occlusion cost is the
    ``tau_percentile``-th percentile of member-to-centroid distances.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    coords, phases = [], []
    for seq in sequences:
        if seq.phases is None:
            raise ValueError(f"sequence {seq.sequence_id!r} carries no phase annotation")
        keep = ~seq.placeholder_mask
        coords.append(subspace.project(seq.stack()[keep]))
        phases.append(seq.phases[keep])
    coords = np.concatenate(coords) if coords else np.empty((0, subspace.dim))
    phases = np.concatenate(phases) if phases else np.empty(0)
    if len(coords) < k:
        raise InsufficientData(f"{len(coords)} frames cannot form {k} key poses")
    if len(np.unique(coords, axis=0)) < k:
        raise InsufficientData(f"fewer than {k} distinct frames")

    allowed = None if phase_window is None else _phase_neighbourhood(phases, k, phase_window)
    centroids = _phase_bin_init(coords, phases, k)
    labels, _ = _assign(coords, centroids, allowed)
    for _ in range(max_iter):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = coords[members].mean(axis=0)
        new_labels, _ = _assign(coords, centroids, allowed)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    labels, dist = _assign(coords, centroids, allowed)

    phase_means = np.empty(k)
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        members = labels == c
        phase_means[c] = _circular_mean(phases[members]) if members.any() else (c + 0.5) / k
    order = np.lexsort((np.arange(k), phase_means))

    tau = float(np.percentile(dist, tau_percentile))
    if tau <= 0.0:
        # exact point masses: fall back to half the closest centroid spacing
        gaps = np.linalg.norm(centroids[:, None] - centroids[None], axis=2)
        tau = 0.5 * float(gaps[np.triu_indices(k, 1)].min())
    return KeyPoseSet(embeddings=centroids[order].copy(), subspace=subspace, occlusion_threshold=tau,
                      phase_means=phase_means[order].copy(), member_counts=counts[order].copy())


def save_keyposes(kp: KeyPoseSet, path) -> Path:
    meta = {"k": kp.k, "dim": kp.subspace.dim, "tau": kp.occlusion_threshold,
            "width": kp.geometry.width, "height": kp.geometry.height}
    arrays = {"embeddings": kp.embeddings, "mean_frame": kp.subspace.mean_frame,
              "basis": kp.subspace.basis, "phase_means": kp.phase_means,
              "member_counts": kp.member_counts.astype(np.int64)}
    if kp.subspace.explained_variance is not None:
        arrays["explained_variance"] = kp.subspace.explained_variance
    return save_checkpoint(path, "keyposes", meta, arrays)


def load_keyposes(path) -> KeyPoseSet:
    meta, arrays = load_checkpoint(path, "keyposes")
    geometry = FrameGeometry(width=meta["width"], height=meta["height"])
    subspace = PcaSubspace(arrays["mean_frame"], arrays["basis"], geometry, arrays.get("explained_variance"))
    return KeyPoseSet(arrays["embeddings"], subspace, float(meta["tau"]), arrays["phase_means"],
                      arrays["member_counts"])


def write_keypose_report(kp: KeyPoseSet, path) -> Path:
    path = Path(path)
    lines = [f"k={kp.k} pca_dim={kp.subspace.dim} tau={kp.occlusion_threshold:.6f}",
             "pose phase_mean members"]
    for i in range(kp.k):
        lines.append(f"{i + 1} {kp.phase_means[i]:.4f} {int(kp.member_counts[i])}")
    path.write_text("\n".join(lines) + "\n")
    return path


def export_keypose_images(kp: KeyPoseSet, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(kp.decoded_images()):
        p = directory / f"keypose_{i + 1:02d}.png"
        Image.fromarray(np.rint(img * 255).astype(np.uint8), mode="L").save(p)
        paths.append(p)
    return paths
