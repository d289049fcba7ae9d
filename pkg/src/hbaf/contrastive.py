"""Inter-modal contrastive objectives.

Three InfoNCE-form terms over a batch of K utterances: two absolute losses
anchoring each uni-modal representation to a learned 512-d projection of the
fused representation, and a relative loss between the audio and text
representations of the same utterance.  Similarities are cosine; each
anchor's positive is its own sample and its negatives are the K-1 other
samples (a config flag switches to the variant that also counts the anchor's
own sample inside the negative sum).  Everything is computed through
log-sum-exp, so tiny temperatures do not overflow.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ModelConfig
from .params import ParameterStore, glorot


class ContrastiveError(ValueError):
    """Batch too small or representations degenerate (zero rows)."""


def init_contrastive(store: ParameterStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    d = cfg.d_model
    store.add("ctr.proj.w", glorot(rng, 2 * d, d))
    store.add("ctr.proj.b", np.zeros(d))


def project_fused(h_m: Tensor, store: ParameterStore) -> Tensor:
    """Map the 2d-wide fused representation into the shared 512-d space."""
    return ag.linear(h_m, store["ctr.proj.w"], store["ctr.proj.b"])


def cosine_sim(x: np.ndarray, y: np.ndarray) -> float:
    """Plain cosine similarity of two vectors; errors on zero norm."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ContrastiveError("cosine similarity undefined for zero-norm vector")
    return float(x @ y / (nx * ny))


def _unit_rows(x: Tensor, what: str) -> Tensor:
    sq = ag.tsum(ag.mul(x, x), axis=1, keepdims=True)
    if np.any(sq.data <= 0.0):
        raise ContrastiveError(f"zero-norm row in {what}: representation collapsed upstream")
    return ag.div(x, ag.power(sq, 0.5))


def cosine_matrix(a: Tensor, b: Tensor, what: str = "batch") -> Tensor:
    """(K, K) matrix of pairwise cosine similarities, differentiable."""
    return ag.matmul(_unit_rows(a, what), ag.transpose(_unit_rows(b, what)))


def nce_loss(positive_sims: Tensor, negative_sims: Tensor, tau: float) -> Tensor:
    """Mean over anchors of -log softmax(pos | pos, negatives) at temperature tau.

    ``positive_sims``: (K,); ``negative_sims``: (K, M).  The positive always
    appears once in the denominator alongside the M negatives.
    """
    pos = ag.mul(positive_sims, 1.0 / tau)
    logits = ag.concat([ag.reshape(pos, (-1, 1)), ag.mul(negative_sims, 1.0 / tau)], axis=1)
    return ag.tmean(ag.add(ag.logsumexp(logits, axis=1), ag.mul(pos, -1.0)))


def _check_batch(k: int) -> None:
    if k < 2:
        raise ContrastiveError(f"contrastive loss needs K >= 2 samples, got {k}")


def _diag(sims: Tensor) -> Tensor:
    k = sims.data.shape[0]
    return ag.tsum(ag.mul(sims, Tensor(np.eye(k, dtype=sims.data.dtype))), axis=1)


def _nce_from_matrix(sims: Tensor, tau: float, double_count_positive: bool) -> Tensor:
    # Denominator over k != i plus the positive itself == full-row sum, so the
    # default form is a plain rowwise log-sum-exp.  The literal variant also
    # adds the anchor's own term a second time.
    pos = ag.mul(_diag(sims), 1.0 / tau)
    logits = ag.mul(sims, 1.0 / tau)
    if double_count_positive:
        logits = ag.concat([ag.reshape(pos, (-1, 1)), logits], axis=1)
    return ag.tmean(ag.add(ag.logsumexp(logits, axis=1), ag.mul(pos, -1.0)))


def absolute_loss(h_modality: Tensor, h_m_proj: Tensor, cfg: ModelConfig) -> Tensor:
    """Anchor a uni-modal representation to the fused projection."""
    _check_batch(h_modality.data.shape[0])
    sims = cosine_matrix(h_modality, h_m_proj, "absolute-loss batch")
    return _nce_from_matrix(sims, cfg.tau, cfg.include_anchor_in_negatives)


def relative_loss(h_a: Tensor, h_l: Tensor, cfg: ModelConfig) -> Tensor:
    """Audio anchored to its own text row against the K-1 other text rows."""
    _check_batch(h_a.data.shape[0])
    sims = cosine_matrix(h_a, h_l, "relative-loss batch")
    return _nce_from_matrix(sims, cfg.tau, double_count_positive=False)


def inter_modal_loss(h_a: Tensor, h_l: Tensor, h_m_proj: Tensor, cfg: ModelConfig) -> tuple[Tensor, dict[str, float]]:
    """lambda1 * L(audio, fused) + lambda2 * L(text, fused) + lambda3 * L(audio, text)."""
    l_am = absolute_loss(h_a, h_m_proj, cfg)
    l_lm = absolute_loss(h_l, h_m_proj, cfg)
    l_al = relative_loss(h_a, h_l, cfg)
    total = ag.add(ag.add(ag.mul(l_am, cfg.lambda1), ag.mul(l_lm, cfg.lambda2)), ag.mul(l_al, cfg.lambda3))
    parts = {"audio_fused": float(l_am.data), "text_fused": float(l_lm.data), "audio_text": float(l_al.data)}
    return total, parts
