"""Non-intrusive speech intelligibility assessment with cross-domain
feature importance weighting and a multi-branched assessment head.

Public surface: the sklearn-style `IntelligibilityRegressor`, the lower
level model/training/evaluation functions, and the `fidonet` CLI.
"""

from .assessment import MbiNetPlus, Prediction
from .config import LossWeights, ModelConfig, TrainConfig, tiny_model_config
from .data import Manifest, UtteranceRecord, parse_manifest, synth_corpus
from .estimator import IntelligibilityRegressor
from .evaluation import EvalReport, ablate_concat, attention_stats, evaluate_checkpoint
from .metrics import lcc, rmse, srcc
from .providers import ProviderConfig, load_embedding, write_embedding
from .training import load_checkpoint, multitask_loss, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "IntelligibilityRegressor",
    "LossWeights",
    "Manifest",
    "MbiNetPlus",
    "ModelConfig",
    "Prediction",
    "ProviderConfig",
    "TrainConfig",
    "UtteranceRecord",
    "ablate_concat",
    "attention_stats",
    "evaluate_checkpoint",
    "lcc",
    "load_checkpoint",
    "load_embedding",
    "multitask_loss",
    "parse_manifest",
    "rmse",
    "save_checkpoint",
    "srcc",
    "synth_corpus",
    "tiny_model_config",
    "train",
    "write_embedding",
]
