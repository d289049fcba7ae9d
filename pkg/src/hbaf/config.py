"""Configuration dataclasses for the model and the training loop."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

ABLATION_FLAGS = ("no_acn", "no_fusion", "no_contrastive", "no_gate", "no_residual", "no_attention")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class AcnConfig:
    """Audio context network: conv -> 2x biLSTM -> 3x transformer encoder."""

    conv_kernel: int = 3
    conv_stride: int = 1
    conv_filters: int = 64
    lstm_units_per_direction: int = 256
    lstm_layers: int = 2
    encoder_layers: int = 3
    encoder_heads: int = 8
    encoder_hidden: int = 512
    d_model: int = 512

    def __post_init__(self):
        if self.encoder_hidden % self.encoder_heads != 0:
            raise ConfigError("encoder_hidden must be divisible by encoder_heads")
        if 2 * self.lstm_units_per_direction != self.encoder_hidden:
            raise ConfigError("2 * lstm_units_per_direction must equal encoder_hidden")
        if self.encoder_hidden != self.d_model:
            raise ConfigError("encoder output width must equal d_model")
        if self.conv_stride != 1:
            raise ConfigError("conv stride must be 1 to keep utterance alignment")
        if self.conv_kernel % 2 != 1:
            raise ConfigError("conv kernel must be odd for symmetric padding")
        for f in ("conv_filters", "lstm_units_per_direction", "lstm_layers", "encoder_layers", "encoder_heads"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be positive")


@dataclass(frozen=True)
class ModelConfig:
    """Full architecture hyperparameters plus ablation switches.

    ``d_model`` is the shared representation width (512 in the reference
    configuration); ``audio_dim``/``text_dim`` are the dims of the ingested
    feature vectors and are taken from the dataset manifest.
    """

    d_model: int = 512
    audio_dim: int = 512
    text_dim: int = 1024
    n_classes: int = 7
    acn: AcnConfig = field(default_factory=AcnConfig)
    attn_hidden: int = 256  # text soft-attention score width
    tau: float = 0.1
    lambda1: float = 1.0 / 3.0
    lambda2: float = 1.0 / 3.0
    lambda3: float = 1.0 / 3.0
    include_anchor_in_negatives: bool = False  # literal sum over all K samples
    separate_cross_projections: bool = False
    dropout: float = 0.0
    dtype: str = "float64"
    no_acn: bool = False
    no_fusion: bool = False
    no_contrastive: bool = False
    no_gate: bool = False
    no_residual: bool = False
    no_attention: bool = False

    def __post_init__(self):
        if self.d_model % 2 != 0:
            raise ConfigError("d_model must be even (biLSTM concat)")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("contrastive weights must be nonnegative")
        if self.attn_hidden < 1:
            raise ConfigError("attn_hidden must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        if self.acn.d_model != self.d_model:
            raise ConfigError("acn.d_model must match d_model")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @staticmethod
    def with_width(width: int, *, audio_dim: int, text_dim: int, n_classes: int, **overrides) -> "ModelConfig":
        """A structurally identical model at a reduced (or full) width."""
        if width % 2 != 0:
            raise ConfigError("width must be even")
        heads = 8 if width % 8 == 0 and width >= 64 else 2
        acn = AcnConfig(
            conv_filters=max(4, width // 8),
            lstm_units_per_direction=width // 2,
            encoder_heads=heads,
            encoder_hidden=width,
            d_model=width,
        )
        return ModelConfig(
            d_model=width,
            audio_dim=audio_dim,
            text_dim=text_dim,
            n_classes=n_classes,
            acn=acn,
            attn_hidden=max(2, width // 2),
            **overrides,
        )

    def ablated(self, flags) -> "ModelConfig":
        unknown = [f for f in flags if f not in ABLATION_FLAGS]
        if unknown:
            raise ConfigError(f"unknown ablation flags: {unknown} (valid: {list(ABLATION_FLAGS)})")
        return replace(self, **{f: True for f in flags})


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation recipe: Adam, additive L2 penalty, patience-based stop."""

    learning_rate: float = 1e-4
    batch_size: int = 8  # dialogues per batch
    l2_weight: float = 3e-4
    patience: int = 15
    mu: float = 0.2
    max_epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled_l2: bool = False  # weight decay outside the loss instead
    standardize: bool = False  # per-dimension feature standardisation

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ConfigError("learning_rate and batch_size must be positive")
        if self.l2_weight < 0 or self.mu < 0:
            raise ConfigError("l2_weight and mu must be nonnegative")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
