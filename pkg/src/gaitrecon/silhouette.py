"""Silhouette frames, sequences, disk I/O and the synthetic walker.

Frames are float32 grids in [0, 1]. Binary inputs are stored as exact 0/1
values; reconstructed frames may hold any value in between.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import EmptyFrame, EmptySequence, GeometryMismatch, MissingPath, UnreadableImage

IMAGE_SUFFIXES = (".png", ".bmp", ".pgm", ".pbm", ".tif", ".tiff")
BINARY_THRESHOLD = 0.5


@dataclass(frozen=True)
class FrameGeometry:
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame geometry must be positive, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height


@dataclass
class SilhouetteFrame:
    pixels: np.ndarray
    is_occluded_placeholder: bool = False

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 2:
            raise ValueError("frame pixels must be a 2-D grid")

    @property
    def geometry(self) -> FrameGeometry:
        h, w = self.pixels.shape
        return FrameGeometry(width=w, height=h)

    @classmethod
    def placeholder(cls, geometry: FrameGeometry) -> "SilhouetteFrame":
        return cls(np.zeros(geometry.shape, dtype=np.float32), is_occluded_placeholder=True)


@dataclass
class GaitSequence:
    frames: list[SilhouetteFrame]
    subject_label: str | None = None
    sequence_id: str = ""
    # fraction of the gait cycle elapsed at each frame, when known
    phases: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.frames) < 1:
            raise EmptySequence("a gait sequence needs at least one frame", module="silhouette")
        g = self.frames[0].pixels.shape
        for f in self.frames:
            if f.pixels.shape != g:
                raise GeometryMismatch("all frames of a sequence must share one geometry")
        if self.phases is not None:
            self.phases = np.asarray(self.phases, dtype=np.float64)
            if self.phases.shape != (len(self.frames),):
                raise ValueError("phases must hold one value per frame")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def geometry(self) -> FrameGeometry:
        return self.frames[0].geometry

    def stack(self) -> np.ndarray:
        """(N, H, W) float32 array of all frames."""
        return np.stack([f.pixels for f in self.frames])

    @property
    def placeholder_mask(self) -> np.ndarray:
        return np.array([f.is_occluded_placeholder for f in self.frames], dtype=bool)


@dataclass(frozen=True)
class SyntheticWalkerParams:
    period: int = 30
    limb_amplitude: float = 18.0
    torso_size: float = 18.0
    phase_offset: float = 0.0
    noise_rate: float = 0.0

    def __post_init__(self):
        if int(self.period) != self.period or self.period < 4:
            raise ValueError("period must be an integer >= 4")
        if not 0.0 <= self.phase_offset < 1.0:
            raise ValueError("phase_offset must lie in [0, 1)")
        if not 0.0 <= self.noise_rate <= 0.1:
            raise ValueError("noise_rate must lie in [0, 0.1]")


def _resize_binary(crop: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    if crop.shape == (new_h, new_w):
        return crop.copy()
    resized = cv2.resize(crop.astype(np.float32), (new_w, new_h), interpolation=cv2.INTER_AREA)
    return (resized >= BINARY_THRESHOLD).astype(np.float32)


def normalize_frame(raw_mask, geometry: FrameGeometry = FrameGeometry()) -> SilhouetteFrame:
    """Crop the foreground, scale it to the frame height and centre it.

    The crop is scaled by ``min(H/h, W/w)`` so the aspect ratio survives; the
    horizontal offset places the foreground centroid at the frame centre,
    clamped so nothing is cut off. Output pixels are exactly 0 or 1.
    """
    mask = np.asarray(raw_mask) >= BINARY_THRESHOLD
    if mask.ndim != 2:
        raise ValueError("raw mask must be 2-D")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise EmptyFrame("mask has no foreground pixel")
    crop = mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].astype(np.float32)
    h, w = crop.shape
    scale = min(geometry.height / h, geometry.width / w)
    new_h = min(geometry.height, max(1, int(round(h * scale))))
    new_w = min(geometry.width, max(1, int(round(w * scale))))
    body = _resize_binary(crop, new_h, new_w)
    if not body.any():
        # a sub-pixel sliver can vanish under area resampling
        body = (cv2.resize(crop, (new_w, new_h), interpolation=cv2.INTER_NEAREST) > 0).astype(np.float32)
    col_mass = body.sum(axis=0)
    centroid = float((col_mass * np.arange(new_w)).sum() / col_mass.sum())
    offset = int(np.floor((geometry.width - 1) / 2.0 - centroid + 0.5))
    offset = min(max(offset, 0), geometry.width - new_w)
    out = np.zeros(geometry.shape, dtype=np.float32)
    out[:new_h, offset:offset + new_w] = body
    return SilhouetteFrame(out)


def _binarize_intensity(img: np.ndarray) -> np.ndarray:
    if img.dtype == np.uint8:
        vals = img.astype(np.float32) / 255.0
    elif img.dtype == np.uint16:
        vals = img.astype(np.float32) / 65535.0
    elif img.dtype == bool:
        vals = img.astype(np.float32)
    else:
        vals = img.astype(np.float32)
        if vals.max(initial=0.0) > 1.0:
            vals = vals / 255.0
    return vals >= BINARY_THRESHOLD


def read_meta(directory: Path) -> dict[str, str]:
    meta_path = directory / "meta.txt"
    meta: dict[str, str] = {}
    if meta_path.is_file():
        for line in meta_path.read_text().splitlines():
            if "=" in line:
                key, value = line.split("=", 1)
                meta[key.strip()] = value.strip()
    return meta


def load_sequence(path, geometry: FrameGeometry = FrameGeometry()) -> GaitSequence:
    """Read every raster in ``path`` (lexicographic order = time order).

    An all-background image is taken to be a blanked frame and comes back as
    a flagged placeholder instead of failing normalisation.
    """
    directory = Path(path)
    if not directory.is_dir():
        raise MissingPath(f"sequence directory not found: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise MissingPath(f"no image files in {directory}")
    frames = []
    for file in files:
        try:
            with Image.open(file) as im:
                img = np.array(im.convert("L") if im.mode not in ("L", "I;16", "1") else im)
        except Exception as exc:
            raise UnreadableImage(f"cannot read image {file}: {exc}") from exc
        mask = _binarize_intensity(img)
        if mask.any():
            frames.append(normalize_frame(mask, geometry))
        else:
            frames.append(SilhouetteFrame.placeholder(geometry))
    meta = read_meta(directory)
    phases = None
    if "phases" in meta and meta["phases"]:
        phases = np.array([float(v) for v in meta["phases"].split(",")])
        if phases.shape != (len(frames),):
            phases = None
    return GaitSequence(frames, subject_label=meta.get("subject"), sequence_id=directory.name,
                        phases=phases)


def save_sequence(seq: GaitSequence, path) -> Path:
    """Write frames as 8-bit PNGs plus a ``meta.txt`` sidecar."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    for old in directory.glob("frame_*"):
        old.unlink()
    for i, frame in enumerate(seq.frames):
        data = np.clip(np.rint(frame.pixels * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(data, mode="L").save(directory / f"frame_{i:05d}.png")
    lines = []
    if seq.subject_label is not None:
        lines.append(f"subject={seq.subject_label}")
    if seq.phases is not None:
        lines.append("phases=" + ",".join(f"{p:.6f}" for p in seq.phases))
    occluded = np.flatnonzero(seq.placeholder_mask)
    if occluded.size:
        lines.append("occluded=" + ",".join(str(i) for i in occluded))
    (directory / "meta.txt").write_text("\n".join(lines) + ("\n" if lines else ""))
    return directory


@dataclass(frozen=True)
class ManifestEntry:
    sequence_id: str
    subject_label: str
    path: str


def write_manifest(entries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{e.sequence_id} {e.subject_label} {e.path}\n" for e in entries))
    return path


def read_manifest(path) -> list[ManifestEntry]:
    """Parse ``<sequence_id> <subject_label> <path>`` lines.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingPath(f"manifest not found: {path}")
    entries = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        seq_id, label, seq_path = line.split(maxsplit=2)
        if not os.path.isabs(seq_path):
            seq_path = str(path.parent / seq_path)
        entries.append(ManifestEntry(seq_id, label, seq_path))
    return entries


# -- synthetic walker ------------------------------------------------------

_CANVAS = (128, 128)
_HIP_Y, _HIP_X = 72, 64
_SHOULDER_Y = 36
_LEG_LEN = 46.0
_ARM_LEN = 30.0


def _render_walker(phase: float, params: SyntheticWalkerParams) -> np.ndarray:
    canvas = np.zeros(_CANVAS, dtype=np.uint8)
    angle = 2.0 * np.pi * phase
    half = params.torso_size / 2.0
    cv2.ellipse(canvas, (_HIP_X, (_HIP_Y + _SHOULDER_Y) // 2),
                (max(1, int(round(half))), (_HIP_Y - _SHOULDER_Y) // 2 + 2), 0, 0, 360, 1, -1)
    cv2.circle(canvas, (_HIP_X, _SHOULDER_Y - 10), 8, 1, -1)
    # near leg is thick and bends at the knee, far leg is half a cycle behind and thin
    for leg_phase, thickness, bend in ((angle, 8, 6.0), (angle + np.pi, 4, 2.0)):
        dx = params.limb_amplitude * np.sin(leg_phase)
        dx = float(np.clip(dx, -0.9 * _LEG_LEN, 0.9 * _LEG_LEN))
        dy = np.sqrt(_LEG_LEN ** 2 - dx ** 2)
        knee = (int(round(_HIP_X + 0.55 * dx + bend * max(0.0, np.cos(leg_phase)))),
                int(round(_HIP_Y + 0.5 * dy)))
        foot = (int(round(_HIP_X + dx)), int(round(_HIP_Y + dy)))
        cv2.line(canvas, (_HIP_X, _HIP_Y), knee, 1, thickness)
        cv2.line(canvas, knee, foot, 1, thickness)
        cv2.line(canvas, foot, (foot[0] + 6, foot[1]), 1, 3)
    # one visible arm: tucked behind the torso at phase 0, fully forward at mid-cycle
    swing = 1.2 * params.limb_amplitude * (0.5 - 0.5 * np.cos(angle))
    hand = (int(round(_HIP_X + swing)),
            int(round(_SHOULDER_Y + 2 + np.sqrt(max(_ARM_LEN ** 2 - swing ** 2, 25.0)))))
    cv2.line(canvas, (_HIP_X, _SHOULDER_Y + 2), hand, 1, 6)
    return canvas


def generate_synthetic_walker(params: SyntheticWalkerParams, n_frames: int, seed: int = 0,
                              geometry: FrameGeometry = FrameGeometry(),
                              subject_label: str | None = None,
                              sequence_id: str = "synthetic") -> GaitSequence:
    """Render a side-view stick walker and normalise every frame.

    Phase at frame ``i`` is ``(i mod period) / period + phase_offset`` so the
    noiseless sequence is exactly periodic. Noise flips pixels of the
    normalised frame at ``noise_rate``.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    period = int(params.period)
    frames = []
    phases = np.empty(n_frames)
    for i in range(n_frames):
        phase = ((i % period) / period + params.phase_offset) % 1.0
        phases[i] = phase
        frame = normalize_frame(_render_walker(phase, params), geometry)
        if params.noise_rate > 0:
            flips = rng.random(geometry.shape) < params.noise_rate
            frame = SilhouetteFrame(np.where(flips, 1.0 - frame.pixels, frame.pixels))
        frames.append(frame)
    return GaitSequence(frames, subject_label=subject_label, sequence_id=sequence_id, phases=phases)


def foreground_area(seq: GaitSequence) -> np.ndarray:
    return seq.stack().reshape(len(seq), -1).sum(axis=1)


def autocorrelation(series) -> np.ndarray:
    """Biased (divide-by-n) normalised autocorrelation for lags 0..n-1."""
    x = np.asarray(series, dtype=np.float64)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return np.ones(len(x))
    full = np.correlate(x, x, mode="full")[len(x) - 1:]
    return full / denom


def estimate_period(series, min_lag: int = 4) -> int:
    """Dominant period: highest autocorrelation peak after the first trough."""
    ac = autocorrelation(series)
    n = len(ac)
    if n < 2 * min_lag:
        raise ValueError("series too short to estimate a period")
    lag = 1
    while lag < n - 1 and ac[lag + 1] < ac[lag]:
        lag += 1
    lag = max(lag, min_lag)
    upper = max(lag + 1, n // 2 + 1)
    return int(lag + np.argmax(ac[lag:upper]))


def estimate_phases(seq: GaitSequence, period: int | None = None) -> np.ndarray:
    """Phase annotation for unlabelled data from the area series.

    The cycle origin is the frame of largest foreground area within the first
    period, which puts every sequence's phase zero near the same stance.
    """
    area = foreground_area(seq)
    if period is None:
        period = estimate_period(area)
    origin = int(np.argmax(area[:period]))
    return ((np.arange(len(seq)) - origin) / period) % 1.0


def subject_params(subject: int, period: int = 30, noise_rate: float = 0.0) -> SyntheticWalkerParams:
    """Body proportions for synthetic subject ``subject``.

    Subjects 0..19 tile a 5 x 4 grid of torso width and stride amplitude;
    further subjects reuse the grid shifted by half a step.
    """
    shift = 0.5 * ((subject // 20) % 2)
    torso = 11.0 + 3.5 * ((subject % 5) + shift)
    amplitude = 11.0 + 4.5 * (((subject // 5) % 4) + shift)
    return SyntheticWalkerParams(period=period, limb_amplitude=amplitude, torso_size=torso,
                                 noise_rate=noise_rate)


def synthetic_corpus(n_subjects: int, seqs_per_subject: int, n_frames: int = 100, seed: int = 0,
                     geometry: FrameGeometry = FrameGeometry(), period: int = 30,
                     noise_rate: float = 0.0) -> list[GaitSequence]:
    """Sequences ordered subject-major; each sequence starts at a random phase."""
    rng = np.random.default_rng(seed)
    corpus = []
    for s in range(n_subjects):
        base = subject_params(s, period=period, noise_rate=noise_rate)
        for q in range(seqs_per_subject):
            params = SyntheticWalkerParams(period=base.period, limb_amplitude=base.limb_amplitude,
                                           torso_size=base.torso_size,
                                           phase_offset=float(rng.random()), noise_rate=noise_rate)
            corpus.append(generate_synthetic_walker(
                params, n_frames, seed=int(rng.integers(2 ** 31)), geometry=geometry,
                subject_label=f"s{s:03d}", sequence_id=f"s{s:03d}_q{q:02d}"))
    return corpus
