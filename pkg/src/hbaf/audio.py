"""Audio context network (ACN).

Lifts per-utterance low-level audio vectors into contextualised
representations over a dialogue: a same-length 1-D convolution along the
utterance axis, two stacked bidirectional LSTM layers, and a stack of
post-norm transformer encoder layers with sinusoidal positions.  The
sequence axis is the dialogue's utterance order; frame-level audio never
enters this package.

With the ``no_acn`` ablation the network degenerates to a learned linear map
of the raw input.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import AcnConfig
from .params import ParameterStore, glorot

_GATES = ("i", "f", "g", "o")
_DIRS = ("fwd", "bwd")


def init_acn(store: ParameterStore, cfg: AcnConfig, audio_dim: int, rng: np.random.Generator, no_acn: bool = False) -> None:
    d = cfg.d_model
    if no_acn:
        store.add("acn.bypass.w", glorot(rng, audio_dim, d))
        store.add("acn.bypass.b", np.zeros(d))
        return
    f = cfg.conv_filters
    store.add("acn.conv.w", glorot(rng, audio_dim * cfg.conv_kernel, f, shape=(cfg.conv_kernel, audio_dim, f)))
    store.add("acn.conv.b", np.zeros(f))
    u = cfg.lstm_units_per_direction
    for layer in range(cfg.lstm_layers):
        in_dim = f if layer == 0 else 2 * u
        for dr in _DIRS:
            for gate in _GATES:
                store.add(f"acn.lstm.{layer}.{dr}.w_{gate}", glorot(rng, in_dim, u))
                store.add(f"acn.lstm.{layer}.{dr}.u_{gate}", glorot(rng, u, u))
                store.add(f"acn.lstm.{layer}.{dr}.b_{gate}", np.zeros(u))
    for layer in range(cfg.encoder_layers):
        p = f"acn.enc.{layer}"
        for name in ("wq", "wk", "wv", "wo"):
            store.add(f"{p}.attn.{name}", glorot(rng, d, d))
        for name in ("bq", "bk", "bv", "bo"):
            store.add(f"{p}.attn.{name}", np.zeros(d))
        store.add(f"{p}.ln1.scale", np.ones(d))
        store.add(f"{p}.ln1.offset", np.zeros(d))
        store.add(f"{p}.ff.w1", glorot(rng, d, 2 * d))
        store.add(f"{p}.ff.b1", np.zeros(2 * d))
        store.add(f"{p}.ff.w2", glorot(rng, 2 * d, d))
        store.add(f"{p}.ff.b2", np.zeros(d))
        store.add(f"{p}.ln2.scale", np.ones(d))
        store.add(f"{p}.ln2.offset", np.zeros(d))


def conv1d_forward(seq: Tensor, store: ParameterStore, cfg: AcnConfig) -> Tensor:
    """Same-length convolution over the utterance axis (stride 1, zero pad)."""
    n = seq.data.shape[0]
    half = cfg.conv_kernel // 2
    pad = Tensor(np.zeros((half, seq.data.shape[1]), dtype=seq.data.dtype))
    padded = ag.concat([pad, seq, pad], axis=0)
    w = store["acn.conv.w"]
    out = None
    for k in range(cfg.conv_kernel):
        term = ag.matmul(padded[k : k + n], w[k])
        out = term if out is None else ag.add(out, term)
    return ag.add(out, store["acn.conv.b"])


def _lstm_direction(seq: Tensor, store: ParameterStore, prefix: str, units: int, reverse: bool) -> list[Tensor]:
    n = seq.data.shape[0]
    w = {g: store[f"{prefix}.w_{g}"] for g in _GATES}
    u = {g: store[f"{prefix}.u_{g}"] for g in _GATES}
    b = {g: store[f"{prefix}.b_{g}"] for g in _GATES}
    h = Tensor(np.zeros((1, units), dtype=seq.data.dtype))
    c = Tensor(np.zeros((1, units), dtype=seq.data.dtype))
    steps = range(n - 1, -1, -1) if reverse else range(n)
    out: list[Tensor | None] = [None] * n
    for t in steps:
        x = seq[t : t + 1]
        i = ag.sigmoid(ag.add(ag.add(ag.matmul(x, w["i"]), ag.matmul(h, u["i"])), b["i"]))
        f = ag.sigmoid(ag.add(ag.add(ag.matmul(x, w["f"]), ag.matmul(h, u["f"])), b["f"]))
        g = ag.tanh(ag.add(ag.add(ag.matmul(x, w["g"]), ag.matmul(h, u["g"])), b["g"]))
        o = ag.sigmoid(ag.add(ag.add(ag.matmul(x, w["o"]), ag.matmul(h, u["o"])), b["o"]))
        c = ag.add(ag.mul(f, c), ag.mul(i, g))
        h = ag.mul(o, ag.tanh(c))
        out[t] = h
    return out  # aligned to utterance order


def bilstm_forward(seq: Tensor, store: ParameterStore, cfg: AcnConfig) -> Tensor:
    """Two stacked biLSTM layers; zero initial states; outputs concat(fwd, bwd)."""
    x = seq
    for layer in range(cfg.lstm_layers):
        fwd = _lstm_direction(x, store, f"acn.lstm.{layer}.fwd", cfg.lstm_units_per_direction, reverse=False)
        bwd = _lstm_direction(x, store, f"acn.lstm.{layer}.bwd", cfg.lstm_units_per_direction, reverse=True)
        rows = [ag.concat([f, b], axis=1) for f, b in zip(fwd, bwd)]
        x = ag.concat(rows, axis=0)
    return x


def positional_encoding(n: int, d: int, dtype=np.float64) -> np.ndarray:
    """Fixed sinusoidal table for ``n`` positions of width ``d``."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


def encoder_forward(seq: Tensor, store: ParameterStore, cfg: AcnConfig, collect: dict | None = None) -> Tensor:
    """Post-norm transformer encoder stack with full self-attention."""
    n, d = seq.data.shape
    heads = cfg.encoder_heads
    dh = d // heads
    x = ag.add(seq, Tensor(positional_encoding(n, d, dtype=seq.data.dtype)))
    for layer in range(cfg.encoder_layers):
        p = f"acn.enc.{layer}"
        q = ag.linear(x, store[f"{p}.attn.wq"], store[f"{p}.attn.bq"])
        k = ag.linear(x, store[f"{p}.attn.wk"], store[f"{p}.attn.bk"])
        v = ag.linear(x, store[f"{p}.attn.wv"], store[f"{p}.attn.bv"])
        head_outs = []
        weight_sink = [] if collect is not None else None
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            head_outs.append(ag.scaled_dot_attention(q[:, sl], k[:, sl], v[:, sl], collect=weight_sink))
        if collect is not None:
            collect.setdefault("acn_attention", []).extend(weight_sink)
        attn = ag.linear(ag.concat(head_outs, axis=1), store[f"{p}.attn.wo"], store[f"{p}.attn.bo"])
        x = ag.layer_norm(ag.add(x, attn), store[f"{p}.ln1.scale"], store[f"{p}.ln1.offset"])
        ff = ag.linear(ag.relu(ag.linear(x, store[f"{p}.ff.w1"], store[f"{p}.ff.b1"])), store[f"{p}.ff.w2"], store[f"{p}.ff.b2"])
        x = ag.layer_norm(ag.add(x, ff), store[f"{p}.ln2.scale"], store[f"{p}.ln2.offset"])
    return x


def acn_forward(dialogue_audio: Tensor, store: ParameterStore, cfg: AcnConfig, no_acn: bool = False, collect: dict | None = None) -> Tensor:
    """Contextualised audio representation H_a, shape (N, d_model)."""
    if no_acn:
        return ag.linear(dialogue_audio, store["acn.bypass.w"], store["acn.bypass.b"])
    x = conv1d_forward(dialogue_audio, store, cfg)
    x = bilstm_forward(x, store, cfg)
    return encoder_forward(x, store, cfg, collect=collect)
