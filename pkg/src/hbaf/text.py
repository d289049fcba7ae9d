"""Text context network.

Per utterance, four 1024-d inputs (a sentence-context vector and three
commonsense relation vectors) are projected to the model width.  Each
utterance then receives an attentive summary of the *previous* utterances'
projected context vectors (additive soft attention with a learned scoring
vector), and three independent GRUs advance the external / internal /
purpose states on the sum of that summary and the matching projected
commonsense vector.  The concatenated states are projected back to the
model width to form H_l.

The first utterance has no priors; its attentive context is the zero
vector.  H_l[t] therefore never depends on utterances after t.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .params import ParameterStore, glorot

_RELATIONS = ("e", "i", "p")
_GRU_GATES = ("z", "r", "n")


def init_text(store: ParameterStore, d_model: int, text_dim: int, attn_hidden: int, rng: np.random.Generator) -> None:
    for name in ("in_r", "in_e", "in_i", "in_p"):
        store.add(f"txt.proj.{name}.w", glorot(rng, text_dim, d_model))
        store.add(f"txt.proj.{name}.b", np.zeros(d_model))
    store.add("txt.attn.w_s", glorot(rng, d_model, attn_hidden))
    store.add("txt.attn.b_s", np.zeros(attn_hidden))
    store.add("txt.attn.v", glorot(rng, attn_hidden, 1, shape=(attn_hidden,)))
    for rel in _RELATIONS:
        for gate in _GRU_GATES:
            store.add(f"txt.gru.{rel}.w_{gate}", glorot(rng, d_model, d_model))
            store.add(f"txt.gru.{rel}.u_{gate}", glorot(rng, d_model, d_model))
            store.add(f"txt.gru.{rel}.b_{gate}", np.zeros(d_model))
    store.add("txt.proj.out.w", glorot(rng, 3 * d_model, d_model))
    store.add("txt.proj.out.b", np.zeros(d_model))


def soft_attention_context(prior_contexts: Tensor, store: ParameterStore, collect: dict | None = None) -> Tensor:
    """Attentive summary of prior projected context vectors; (d,) output.

    score_i = v . tanh(W_s prior_i + b_s); alpha = softmax(scores);
    returns sum_i alpha_i * prior_i.  Callers handle the empty-prior case.
    """
    scores = ag.matmul(ag.tanh(ag.linear(prior_contexts, store["txt.attn.w_s"], store["txt.attn.b_s"])), store["txt.attn.v"])
    alpha = ag.softmax(scores, axis=-1)
    if collect is not None:
        collect.setdefault("text_alpha", []).append(alpha.data.copy())
    return ag.matmul(alpha, prior_contexts)


def gru_step(prev_state: Tensor, inp: Tensor, store: ParameterStore, prefix: str) -> Tensor:
    """One gated-recurrent update; update gate z pulls in the candidate."""
    w = {g: store[f"{prefix}.w_{g}"] for g in _GRU_GATES}
    u = {g: store[f"{prefix}.u_{g}"] for g in _GRU_GATES}
    b = {g: store[f"{prefix}.b_{g}"] for g in _GRU_GATES}
    z = ag.sigmoid(ag.add(ag.add(ag.matmul(inp, w["z"]), ag.matmul(prev_state, u["z"])), b["z"]))
    r = ag.sigmoid(ag.add(ag.add(ag.matmul(inp, w["r"]), ag.matmul(prev_state, u["r"])), b["r"]))
    n = ag.tanh(ag.add(ag.add(ag.matmul(inp, w["n"]), ag.matmul(ag.mul(r, prev_state), u["n"])), b["n"]))
    return ag.add(ag.mul(ag.add(Tensor(np.ones_like(z.data)), ag.mul(z, -1.0)), prev_state), ag.mul(z, n))


def text_context_forward(
    text_ctx: Tensor,
    cs_external: Tensor,
    cs_internal: Tensor,
    cs_purpose: Tensor,
    store: ParameterStore,
    collect: dict | None = None,
) -> Tensor:
    """High-level text representation H_l, shape (N, d_model)."""
    n = text_ctx.data.shape[0]
    d = store["txt.proj.out.b"].data.shape[0]
    proj_r = ag.linear(text_ctx, store["txt.proj.in_r.w"], store["txt.proj.in_r.b"])
    proj_cs = {
        "e": ag.linear(cs_external, store["txt.proj.in_e.w"], store["txt.proj.in_e.b"]),
        "i": ag.linear(cs_internal, store["txt.proj.in_i.w"], store["txt.proj.in_i.b"]),
        "p": ag.linear(cs_purpose, store["txt.proj.in_p.w"], store["txt.proj.in_p.b"]),
    }
    states = {rel: Tensor(np.zeros((1, d), dtype=text_ctx.data.dtype)) for rel in _RELATIONS}
    zero_ctx = Tensor(np.zeros(d, dtype=text_ctx.data.dtype))
    rows = []
    for t in range(n):
        l_c = soft_attention_context(proj_r[0:t], store, collect=collect) if t >= 1 else zero_ctx
        for rel in _RELATIONS:
            inp = ag.add(proj_cs[rel][t : t + 1], l_c)
            states[rel] = gru_step(states[rel], inp, store, f"txt.gru.{rel}")
        rows.append(ag.concat([states["e"], states["i"], states["p"]], axis=1))
    return ag.linear(ag.concat(rows, axis=0), store["txt.proj.out.w"], store["txt.proj.out.b"])
