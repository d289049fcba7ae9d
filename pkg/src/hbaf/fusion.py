"""Multi-modal fusion: bimodal attention, dynamic filter gate, residual.

Both modalities run single-head scaled-dot self-attention (projections
without bias) and, in parallel, cross-attention where the query comes from
the other modality and key/value projections are shared with the target
modality's self-attention (separate cross projections are a config option).
A sigmoid gate then takes a pointwise convex combination of the
self-attended and cross-attended features, and a residual stage
(concat -> project -> layer norm, then add & norm around a feed-forward)
produces the final h_a and h_l.  Their rowwise concatenation is the fused
representation h_m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ModelConfig
from .params import ParameterStore, glorot


@dataclass
class FusionState:
    """Every intermediate the fusion stage produces, for one dialogue."""

    zeta_a: Tensor
    zeta_l: Tensor
    zeta_al: Tensor  # query audio, key/value text
    zeta_la: Tensor  # query text, key/value audio
    gate_a: Tensor
    gate_l: Tensor
    star_a: Tensor
    star_l: Tensor
    h_a: Tensor
    h_l: Tensor
    h_m: Tensor


def init_fusion(store: ParameterStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    d = cfg.d_model
    for m in ("a", "l"):
        for name in ("q", "k", "v"):
            store.add(f"fus.attn.{m}.{name}", glorot(rng, d, d))
    if cfg.separate_cross_projections:
        for direction in ("al", "la"):
            for name in ("q", "k", "v"):
                store.add(f"fus.attn.cross_{direction}.{name}", glorot(rng, d, d))
    for m in ("a", "l"):
        store.add(f"fus.gate.w_s{m}", glorot(rng, d, d))
        store.add(f"fus.gate.w_c{m}", glorot(rng, d, d))
        store.add(f"fus.gate.b_{m}", np.zeros(d))
        p = f"fus.res.{m}"
        store.add(f"{p}.proj.w", glorot(rng, 2 * d, d))
        store.add(f"{p}.proj.b", np.zeros(d))
        store.add(f"{p}.ln1.scale", np.ones(d))
        store.add(f"{p}.ln1.offset", np.zeros(d))
        store.add(f"{p}.ff.w1", glorot(rng, d, 2 * d))
        store.add(f"{p}.ff.b1", np.zeros(2 * d))
        store.add(f"{p}.ff.w2", glorot(rng, 2 * d, d))
        store.add(f"{p}.ff.b2", np.zeros(d))
        store.add(f"{p}.ln2.scale", np.ones(d))
        store.add(f"{p}.ln2.offset", np.zeros(d))


def self_attention(h: Tensor, store: ParameterStore, modality: str, collect: dict | None = None) -> Tensor:
    """softmax(QK^T/sqrt(d))V with Q, K, V all projected from ``h``."""
    q = ag.matmul(h, store[f"fus.attn.{modality}.q"])
    k = ag.matmul(h, store[f"fus.attn.{modality}.k"])
    v = ag.matmul(h, store[f"fus.attn.{modality}.v"])
    sink = [] if collect is not None else None
    out = ag.scaled_dot_attention(q, k, v, collect=sink)
    if collect is not None:
        collect.setdefault("fusion_attention", []).extend(sink)
    return out


def cross_attention(
    h_src: Tensor,
    h_tgt: Tensor,
    store: ParameterStore,
    src: str,
    tgt: str,
    separate: bool = False,
    collect: dict | None = None,
) -> Tensor:
    """Query from ``src``, key/value from ``tgt``; modalities must align on N."""
    if h_src.data.shape[0] != h_tgt.data.shape[0]:
        raise ValueError(f"modalities disagree on utterance count: {h_src.data.shape[0]} vs {h_tgt.data.shape[0]}")
    if separate:
        p = f"fus.attn.cross_{src}{tgt}"
        q = ag.matmul(h_src, store[f"{p}.q"])
        k = ag.matmul(h_tgt, store[f"{p}.k"])
        v = ag.matmul(h_tgt, store[f"{p}.v"])
    else:
        q = ag.matmul(h_src, store[f"fus.attn.{src}.q"])
        k = ag.matmul(h_tgt, store[f"fus.attn.{tgt}.k"])
        v = ag.matmul(h_tgt, store[f"fus.attn.{tgt}.v"])
    sink = [] if collect is not None else None
    out = ag.scaled_dot_attention(q, k, v, collect=sink)
    if collect is not None:
        collect.setdefault("fusion_attention", []).extend(sink)
    return out


def dynamic_filter_gate(zeta_self: Tensor, zeta_cross: Tensor, store: ParameterStore, modality: str) -> tuple[Tensor, Tensor]:
    """G = sigmoid(self W_s + cross W_c + b); pointwise convex combination."""
    g = ag.sigmoid(
        ag.add(
            ag.add(ag.matmul(zeta_self, store[f"fus.gate.w_s{modality}"]), ag.matmul(zeta_cross, store[f"fus.gate.w_c{modality}"])),
            store[f"fus.gate.b_{modality}"],
        )
    )
    one_minus = ag.add(Tensor(np.ones_like(g.data)), ag.mul(g, -1.0))
    star = ag.add(ag.mul(g, zeta_self), ag.mul(one_minus, zeta_cross))
    return g, star


def residual_block(h_orig: Tensor, h_star: Tensor, store: ParameterStore, modality: str) -> Tensor:
    """Concat + project + layer norm, then add & norm around a feed-forward."""
    p = f"fus.res.{modality}"
    merged = ag.linear(ag.concat([h_orig, h_star], axis=1), store[f"{p}.proj.w"], store[f"{p}.proj.b"])
    h_ln = ag.layer_norm(merged, store[f"{p}.ln1.scale"], store[f"{p}.ln1.offset"])
    ff = ag.linear(ag.relu(ag.linear(h_ln, store[f"{p}.ff.w1"], store[f"{p}.ff.b1"])), store[f"{p}.ff.w2"], store[f"{p}.ff.b2"])
    return ag.layer_norm(ag.add(h_ln, ff), store[f"{p}.ln2.scale"], store[f"{p}.ln2.offset"])


def fuse(h_audio: Tensor, h_text: Tensor, store: ParameterStore, cfg: ModelConfig, collect: dict | None = None) -> FusionState:
    """Full fusion stage for one dialogue; honours the ablation switches."""
    if h_audio.data.shape[0] != h_text.data.shape[0]:
        raise ValueError("modalities disagree on utterance count")
    if cfg.no_attention:
        zeta_a, zeta_l = h_audio, h_text
        zeta_al, zeta_la = h_text, h_audio  # identity over each value source
    else:
        zeta_a = self_attention(h_audio, store, "a", collect=collect)
        zeta_l = self_attention(h_text, store, "l", collect=collect)
        zeta_al = cross_attention(h_audio, h_text, store, "a", "l", cfg.separate_cross_projections, collect=collect)
        zeta_la = cross_attention(h_text, h_audio, store, "l", "a", cfg.separate_cross_projections, collect=collect)
    if cfg.no_gate:
        half_a = Tensor(np.full_like(zeta_a.data, 0.5))
        half_l = Tensor(np.full_like(zeta_l.data, 0.5))
        gate_a, gate_l = half_a, half_l
        star_a = ag.mul(ag.add(zeta_a, zeta_la), 0.5)
        star_l = ag.mul(ag.add(zeta_l, zeta_al), 0.5)
    else:
        gate_a, star_a = dynamic_filter_gate(zeta_a, zeta_la, store, "a")
        gate_l, star_l = dynamic_filter_gate(zeta_l, zeta_al, store, "l")
    if cfg.no_residual:
        h_a, h_l = star_a, star_l
    else:
        h_a = residual_block(h_audio, star_a, store, "a")
        h_l = residual_block(h_text, star_l, store, "l")
    h_m = ag.concat([h_a, h_l], axis=1)
    return FusionState(zeta_a, zeta_l, zeta_al, zeta_la, gate_a, gate_l, star_a, star_l, h_a, h_l, h_m)
