"""End-to-end model assembly.

Wires the audio context network, the text context network, fusion, the
contrastive projection head and the linear classifier around one shared
:class:`ParameterStore`, and runs whole batches of dialogues (a batch is a
list of dialogues; utterances pool across the batch for classification and
for the contrastive terms).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .audio import acn_forward, init_acn
from .config import ModelConfig
from .contrastive import init_contrastive, inter_modal_loss, project_fused
from .fusion import FusionState, fuse, init_fusion
from .params import ParameterStore, glorot
from .text import init_text, text_context_forward


@dataclass
class BatchForward:
    """Pooled outputs for a batch of dialogues (K utterances total)."""

    h_a: Tensor  # (K, d)
    h_l: Tensor  # (K, d)
    h_m: Tensor  # (K, 2d)
    logits: Tensor  # (K, C)
    labels: np.ndarray  # (K,)
    fusion_states: list[FusionState | None]
    named: list[tuple[str, np.ndarray]]  # forward tensors in creation order


@dataclass
class LossReport:
    """Loss values for one step; l_total = l_ce + mu * l_inter always."""

    l_ce: float
    l_inter: float
    l_total: float
    mu: float
    parts: dict[str, float]
    l2_penalty: float = 0.0


class HbafModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.store = ParameterStore(dtype=cfg.np_dtype)
        rng = np.random.default_rng(seed)
        init_acn(self.store, cfg.acn, cfg.audio_dim, rng, no_acn=cfg.no_acn)
        init_text(self.store, cfg.d_model, cfg.text_dim, cfg.attn_hidden, rng)
        if not cfg.no_fusion:
            init_fusion(self.store, cfg, rng)
        init_contrastive(self.store, cfg, rng)
        self.store.add("clf.w", glorot(rng, 2 * cfg.d_model, cfg.n_classes))
        self.store.add("clf.b", np.zeros(cfg.n_classes))

    # -- forward ----------------------------------------------------------

    def _to_tensor(self, arr: np.ndarray) -> Tensor:
        return Tensor(np.ascontiguousarray(arr, dtype=self.cfg.np_dtype))

    def forward_dialogue(self, record, collect: dict | None = None):
        """(H_a, H_l, fusion_state_or_None, h_a, h_l, h_m) for one dialogue."""
        audio, text, cs_e, cs_i, cs_p, _labels = record.arrays()
        h_audio = acn_forward(self._to_tensor(audio), self.store, self.cfg.acn, no_acn=self.cfg.no_acn, collect=collect)
        h_text = text_context_forward(
            self._to_tensor(text),
            self._to_tensor(cs_e),
            self._to_tensor(cs_i),
            self._to_tensor(cs_p),
            self.store,
            collect=collect,
        )
        if self.cfg.no_fusion:
            h_m = ag.concat([h_audio, h_text], axis=1)
            return h_audio, h_text, None, h_audio, h_text, h_m
        state = fuse(h_audio, h_text, self.store, self.cfg, collect=collect)
        return h_audio, h_text, state, state.h_a, state.h_l, state.h_m

    def forward_batch(self, records, collect: dict | None = None) -> BatchForward:
        parts_a, parts_l, parts_m, labels, states, named = [], [], [], [], [], []
        for rec in records:
            ctx_a, ctx_l, state, h_a, h_l, h_m = self.forward_dialogue(rec, collect=collect)
            named.append((f"H_a[{rec.dialogue_id}]", ctx_a.data))
            named.append((f"H_l[{rec.dialogue_id}]", ctx_l.data))
            named.append((f"h_m[{rec.dialogue_id}]", h_m.data))
            parts_a.append(h_a)
            parts_l.append(h_l)
            parts_m.append(h_m)
            states.append(state)
            labels.append(np.array([u.label for u in rec.utterances], dtype=np.int64))
        h_a = ag.concat(parts_a, axis=0) if len(parts_a) > 1 else parts_a[0]
        h_l = ag.concat(parts_l, axis=0) if len(parts_l) > 1 else parts_l[0]
        h_m = ag.concat(parts_m, axis=0) if len(parts_m) > 1 else parts_m[0]
        logits = ag.linear(h_m, self.store["clf.w"], self.store["clf.b"])
        named.append(("logits", logits.data))
        return BatchForward(h_a, h_l, h_m, logits, np.concatenate(labels), states, named)

    # -- objectives --------------------------------------------------------

    def classify(self, h_m: Tensor) -> Tensor:
        """Rowwise class probabilities from fused representations."""
        return ag.softmax(ag.linear(h_m, self.store["clf.w"], self.store["clf.b"]), axis=-1)

    def cross_entropy(self, logits: Tensor, labels: np.ndarray) -> Tensor:
        """Mean -log p(true class), computed stably from logits."""
        k, c = logits.data.shape
        onehot = np.zeros((k, c), dtype=logits.data.dtype)
        onehot[np.arange(k), labels] = 1.0
        true_logit = ag.tsum(ag.mul(logits, Tensor(onehot)), axis=1)
        return ag.tmean(ag.add(ag.logsumexp(logits, axis=1), ag.mul(true_logit, -1.0)))

    def batch_loss(self, fwd: BatchForward, mu: float) -> tuple[Tensor, LossReport]:
        """Objective tensor (without the L2 penalty) and its report.

        The contrastive term enters the objective only when mu > 0 and the
        model is not ablated to no_contrastive; it is still computed for
        reporting either way (as long as the batch has K >= 2 utterances),
        so ablated and mu = 0 runs emit identical histories.
        """
        ce = self.cross_entropy(fwd.logits, fwd.labels)
        use_inter = mu > 0.0 and not self.cfg.no_contrastive
        inter_val, parts = 0.0, {}
        if fwd.labels.shape[0] >= 2:
            if use_inter:
                inter, parts = inter_modal_loss(fwd.h_a, fwd.h_l, project_fused(fwd.h_m, self.store), self.cfg)
                total = ag.add(ce, ag.mul(inter, mu))
                inter_val = float(inter.data)
            else:
                with ag.no_grad():
                    inter, parts = inter_modal_loss(fwd.h_a, fwd.h_l, project_fused(fwd.h_m, self.store), self.cfg)
                inter_val = float(inter.data)
                total = ce
        else:
            total = ce
        effective_mu = mu if use_inter else 0.0
        report = LossReport(
            l_ce=float(ce.data),
            l_inter=inter_val,
            l_total=float(ce.data) + effective_mu * inter_val,
            mu=effective_mu,
            parts=parts,
        )
        return total, report

    def l2_penalty(self) -> Tensor:
        """Sum of squared parameter norms (differentiable)."""
        total = None
        for _, t in self.store.items():
            term = ag.tsum(ag.mul(t, t))
            total = term if total is None else ag.add(total, term)
        return total
