"""Heterogeneous bimodal attention fusion for conversational emotion recognition.

A numpy library that consumes precomputed per-utterance audio/text feature
vectors, contextualises each modality, fuses them with gated bimodal
attention, and trains end-to-end with a joint cross-entropy + inter-modal
contrastive objective.  Every differentiable path is verifiable against
central finite differences at 64-bit precision.
"""

from .config import AcnConfig, ConfigError, ModelConfig, TrainConfig
from .data import (
    DataError,
    DialogueRecord,
    EmotionLabelSet,
    FeatureManifest,
    IEMOCAP_LABELS,
    MELD_LABELS,
    SynthSpec,
    UtteranceFeatures,
    batch_dialogues,
    dataset_checksum,
    generate_synthetic,
    load_manifest,
    load_split,
    standardize,
    write_dataset,
)
from .metrics import EvalReport, confusion_matrix, evaluate_predictions
from .model import BatchForward, HbafModel, LossReport
from .params import CheckpointError, ParameterStore
from .training import Adam, DivergenceError, GradCheckReport, TrainResult, evaluate, grad_check, train

__version__ = "0.1.0"

__all__ = [
    "AcnConfig",
    "Adam",
    "BatchForward",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DialogueRecord",
    "DivergenceError",
    "EmotionLabelSet",
    "EvalReport",
    "FeatureManifest",
    "GradCheckReport",
    "HbafModel",
    "IEMOCAP_LABELS",
    "LossReport",
    "MELD_LABELS",
    "ModelConfig",
    "ParameterStore",
    "SynthSpec",
    "TrainConfig",
    "TrainResult",
    "UtteranceFeatures",
    "batch_dialogues",
    "confusion_matrix",
    "dataset_checksum",
    "evaluate",
    "evaluate_predictions",
    "generate_synthetic",
    "grad_check",
    "load_manifest",
    "load_split",
    "standardize",
    "train",
    "write_dataset",
]
