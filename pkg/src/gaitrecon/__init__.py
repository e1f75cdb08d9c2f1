"""Occluded gait recognition: key-pose labelling, CVAE + BiLSTM frame reconstruction and GEINet."""
from .errors import GaitError
from .silhouette import (FrameGeometry, GaitSequence, SilhouetteFrame, SyntheticWalkerParams,
                         generate_synthetic_walker, load_sequence, normalize_frame, synthetic_corpus)
from .occlusion import OcclusionMask, apply_mask_latent, occlude_sequence, sample_mask
from .keypose import KeyPoseSet, PcaSubspace, build_keyposes, fit_pca
from .pose_graph import PoseAssignment, StateTransitionModel, detect_occlusion_runs, distance_matrix, map_frames
from .cvae import CvaeConfig, CvaeModel, condition_vector, cvae_loss, decode, encode, sample_latent, train_cvae
from .temporal_filter import BilstmConfig, BilstmModel, filter_window, reconstruct_sequence, train_bilstm
from .recognizer import GaitEnergyImage, GeinetConfig, classify, compute_gei, train_geinet
from .evaluation import EvalRecord, SweepReport, cmc_curve, dice_score, kfold_robustness, occlusion_sweep
from .config import PipelineConfig, load_config, toy_config
from .pipeline import Pipeline, train_pipeline

__version__ = "0.1.0"

__all__ = [
    "GaitError",
    "FrameGeometry",
    "GaitSequence",
    "SilhouetteFrame",
    "SyntheticWalkerParams",
    "generate_synthetic_walker",
    "load_sequence",
    "normalize_frame",
    "synthetic_corpus",
    "OcclusionMask",
    "apply_mask_latent",
    "occlude_sequence",
    "sample_mask",
    "KeyPoseSet",
    "PcaSubspace",
    "build_keyposes",
    "fit_pca",
    "PoseAssignment",
    "StateTransitionModel",
    "detect_occlusion_runs",
    "distance_matrix",
    "map_frames",
    "CvaeConfig",
    "CvaeModel",
    "condition_vector",
    "cvae_loss",
    "decode",
    "encode",
    "sample_latent",
    "train_cvae",
    "BilstmConfig",
    "BilstmModel",
    "filter_window",
    "reconstruct_sequence",
    "train_bilstm",
    "GaitEnergyImage",
    "GeinetConfig",
    "classify",
    "compute_gei",
    "train_geinet",
    "EvalRecord",
    "SweepReport",
    "cmc_curve",
    "dice_score",
    "kfold_robustness",
    "occlusion_sweep",
    "PipelineConfig",
    "load_config",
    "toy_config",
    "Pipeline",
    "train_pipeline",
]
