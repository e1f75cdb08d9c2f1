"""End-to-end wiring: key poses, CVAE, latent filter and GEINet."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .cvae import CvaeModel, condition_matrix, train_cvae
from .keypose import KeyPoseSet, build_keyposes, fit_pca
from .pose_graph import PoseAssignment, label_sequence
from .recognizer import GeinetModel, classify, compute_gei, train_geinet
from .silhouette import GaitSequence
from .temporal_filter import BilstmModel, Reconstruction, make_training_windows, reconstruct, train_bilstm


def fit_keyposes(sequences: list[GaitSequence], cfg: PipelineConfig) -> KeyPoseSet:
    frames = [f for seq in sequences for f in seq.frames if not f.is_occluded_placeholder]
    stride = max(1, int(np.ceil(len(frames) / cfg.keypose.pca_max_frames)))
    subspace = fit_pca(frames[::stride], cfg.keypose.pca_dim)
    return build_keyposes(sequences, subspace, k=cfg.keypose.k, tau_percentile=cfg.keypose.tau_percentile,
                          max_iter=cfg.keypose.max_iter, phase_window=cfg.keypose.phase_window)


def labelled_frames(sequences: list[GaitSequence], kp: KeyPoseSet) -> tuple[np.ndarray, np.ndarray]:
    """All frames with the condition one-hot of their DP label."""
    frames, conds = [], []
    for seq in sequences:
        pa = label_sequence(seq, kp)
        frames.append(seq.stack())
        conds.append(condition_matrix(pa.states, kp.k))
    return np.concatenate(frames), np.concatenate(conds)


def thin(frames: np.ndarray, conds: np.ndarray, max_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Evenly strided subset of at most ``max_frames`` rows (all rows when 0)."""
    if max_frames <= 0 or len(frames) <= max_frames:
        return frames, conds
    idx = np.linspace(0, len(frames) - 1, max_frames).round().astype(np.int64)
    return frames[idx], conds[idx]


def latent_sequences(sequences: list[GaitSequence], kp: KeyPoseSet, cvae: CvaeModel) -> list[np.ndarray]:
    """Encoder means for every frame of every sequence, conditioned on the DP labels."""
    out = []
    for seq in sequences:
        pa = label_sequence(seq, kp)
        mu, _ = cvae.encode_batch(seq.stack(), condition_matrix(pa.states, kp.k))
        out.append(mu)
    return out


@dataclass
class Pipeline:
    keyposes: KeyPoseSet
    cvae: CvaeModel
    bilstm: BilstmModel
    geinet: GeinetModel | None = None

    def label(self, seq: GaitSequence) -> PoseAssignment:
        return label_sequence(seq, self.keyposes)

    def reconstruct(self, seq: GaitSequence) -> Reconstruction:
        return reconstruct(seq, self.label(seq), self.cvae, self.bilstm)

    def rank(self, seq: GaitSequence, reconstruct: bool = True) -> list[tuple[str, float]]:
        if self.geinet is None:
            raise ValueError("pipeline has no recognizer")
        if reconstruct:
            seq = self.reconstruct(seq).sequence
        return classify(compute_gei(seq), self.geinet)


def train_pipeline(training: list[GaitSequence], cfg: PipelineConfig,
                   gallery: list[GaitSequence] | None = None) -> Pipeline:
    """Fit every stage on ``training``; GEINet uses ``gallery`` (default: ``training``)."""
    cfg.sync()
    kp = fit_keyposes(training, cfg)
    frames, conds = thin(*labelled_frames(training, kp), cfg.cvae.max_frames)
    cvae = train_cvae(frames, conds, cfg.cvae, geometry=cfg.frame_geometry)
    windows = make_training_windows(latent_sequences(training, kp, cvae))
    bilstm = train_bilstm(windows, cfg.bilstm.degree_schedule, cfg.bilstm)
    gallery = training if gallery is None else gallery
    geinet = train_geinet([(compute_gei(s), s.subject_label) for s in gallery], cfg.geinet)
    return Pipeline(kp, cvae, bilstm, geinet)
