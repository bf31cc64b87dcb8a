"""Interpretable audio spoofing detection head, trained and scored at desk scale."""

from .explain import RenderSpec, TcaMap, extract_tca_map, localization_score
from .featio import FeatureSeq, SynthSpec, fix_length, read_features, synthesize_corpus
from .metrics import ScoreRecord, TdcfCosts, breakdown_by_attack, compute_eer, compute_min_tdcf
from .model import ModelDims, ModelParams, model_forward
from .ndcore import Param, Tape, Tensor, grad_check
from .train import Checkpoint, TrainConfig, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "FeatureSeq", "ModelDims", "ModelParams", "Param", "RenderSpec",
    "ScoreRecord", "SynthSpec", "Tape", "TcaMap", "TdcfCosts", "Tensor", "TrainConfig",
    "breakdown_by_attack", "compute_eer", "compute_min_tdcf", "extract_tca_map",
    "fit", "fix_length", "grad_check", "load_checkpoint", "localization_score",
    "model_forward", "read_features", "save_checkpoint", "synthesize_corpus",
]
