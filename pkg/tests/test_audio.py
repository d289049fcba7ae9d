"""Audio context network against scalar-loop oracles and its spec contracts."""

import numpy as np
import pytest

import hbaf.autograd as ag
from hbaf.autograd import Tensor
from hbaf.audio import acn_forward, bilstm_forward, conv1d_forward, encoder_forward, init_acn, positional_encoding
from hbaf.config import AcnConfig
from hbaf.params import ParameterStore

from oracles import assert_grads_close, fd_input_grad, naive_attention, naive_bilstm, naive_conv1d


def small_cfg(**kw):
    base = dict(conv_filters=4, lstm_units_per_direction=4, encoder_heads=2, encoder_hidden=8, d_model=8)
    base.update(kw)
    return AcnConfig(**base)


def make_store(cfg, audio_dim, seed=0, no_acn=False):
    store = ParameterStore()
    init_acn(store, cfg, audio_dim, np.random.default_rng(seed), no_acn=no_acn)
    return store


def test_config_invariants():
    with pytest.raises(Exception):
        AcnConfig(encoder_hidden=512, encoder_heads=7)
    with pytest.raises(Exception):
        AcnConfig(lstm_units_per_direction=100, encoder_hidden=512)
    with pytest.raises(Exception):
        AcnConfig(conv_stride=2)


# -- convolution ---------------------------------------------------------------


def test_conv_zero_input_zero_bias():
    cfg = small_cfg()
    store = make_store(cfg, audio_dim=6)
    out = conv1d_forward(Tensor(np.zeros((4, 6))), store, cfg)
    np.testing.assert_allclose(out.data, 0.0)


def test_conv_single_frame_uses_center_tap():
    cfg = small_cfg()
    store = make_store(cfg, audio_dim=6, seed=1)
    x = np.random.default_rng(2).standard_normal((1, 6))
    out = conv1d_forward(Tensor(x), store, cfg)
    expected = x @ store["acn.conv.w"].data[1] + store["acn.conv.b"].data
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_conv_matches_nested_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    cfg = small_cfg()
    store = make_store(cfg, audio_dim=6, seed=seed + 10)
    x = rng.standard_normal((4, 6))
    out = conv1d_forward(Tensor(x), store, cfg)
    expected = naive_conv1d(x, store["acn.conv.w"].data, store["acn.conv.b"].data)
    assert np.max(np.abs(out.data - expected)) < 1e-12


# -- biLSTM --------------------------------------------------------------------


def _lstm_oracle_params(store, cfg):
    layers = []
    for layer in range(cfg.lstm_layers):
        lp = {}
        for dr in ("fwd", "bwd"):
            lp[dr] = {
                g: (
                    store[f"acn.lstm.{layer}.{dr}.w_{g}"].data,
                    store[f"acn.lstm.{layer}.{dr}.u_{g}"].data,
                    store[f"acn.lstm.{layer}.{dr}.b_{g}"].data,
                )
                for g in "ifgo"
            }
        layers.append(lp)
    return layers


def test_bilstm_zero_parameters_give_zero_output():
    cfg = small_cfg()
    store = make_store(cfg, audio_dim=6)
    for name, t in store.items():
        if name.startswith("acn.lstm"):
            t.data = np.zeros_like(t.data)
    out = bilstm_forward(Tensor(np.random.default_rng(0).standard_normal((3, 4))), store, cfg)
    np.testing.assert_allclose(out.data, 0.0)


def test_bilstm_single_step_halves_are_independent_cells():
    cfg = small_cfg()
    store = make_store(cfg, audio_dim=6, seed=3)
    x = np.random.default_rng(4).standard_normal((1, 4))
    out = bilstm_forward(Tensor(x), store, cfg)
    oracle = naive_bilstm(x, _lstm_oracle_params(store, cfg), cfg.lstm_units_per_direction)
    assert np.max(np.abs(out.data - oracle)) < 1e-12
    # forward/backward halves come from different parameter sets
    assert not np.allclose(out.data[0, :4], out.data[0, 4:])


@pytest.mark.parametrize("seed", range(4))
def test_bilstm_matches_scalar_loop_oracle(seed):
    cfg = small_cfg()
    store = make_store(cfg, audio_dim=6, seed=seed)
    x = np.random.default_rng(seed + 20).standard_normal((3, 4))
    out = bilstm_forward(Tensor(x), store, cfg)
    oracle = naive_bilstm(x, _lstm_oracle_params(store, cfg), cfg.lstm_units_per_direction)
    assert np.max(np.abs(out.data - oracle)) < 1e-12


# -- transformer encoder ---------------------------------------------------------


def test_encoder_single_utterance_attention_is_one():
    cfg = small_cfg()
    store = make_store(cfg, audio_dim=6, seed=5)
    collect = {}
    encoder_forward(Tensor(np.random.default_rng(6).standard_normal((1, 8))), store, cfg, collect=collect)
    for w in collect["acn_attention"]:
        np.testing.assert_allclose(w, [[1.0]])


def test_encoder_attention_rows_sum_to_one():
    cfg = small_cfg()
    store = make_store(cfg, audio_dim=6, seed=7)
    collect = {}
    encoder_forward(Tensor(np.random.default_rng(8).standard_normal((5, 8))), store, cfg, collect=collect)
    assert len(collect["acn_attention"]) == cfg.encoder_layers * cfg.encoder_heads
    for w in collect["acn_attention"]:
        np.testing.assert_allclose(w.sum(axis=1), np.ones(5), atol=1e-9)


def test_encoder_single_head_matches_dense_oracle():
    cfg = AcnConfig(conv_filters=4, lstm_units_per_direction=1, encoder_layers=1, encoder_heads=1, encoder_hidden=2, d_model=2)
    store = make_store(cfg, audio_dim=4, seed=9)
    x = np.random.default_rng(10).standard_normal((2, 2))
    out = encoder_forward(Tensor(x), store, cfg)

    # dense re-derivation
    h = x + positional_encoding(2, 2)
    q = h @ store["acn.enc.0.attn.wq"].data + store["acn.enc.0.attn.bq"].data
    k = h @ store["acn.enc.0.attn.wk"].data + store["acn.enc.0.attn.bk"].data
    v = h @ store["acn.enc.0.attn.wv"].data + store["acn.enc.0.attn.bv"].data
    attn = naive_attention(q, k, v)
    attn = attn @ store["acn.enc.0.attn.wo"].data + store["acn.enc.0.attn.bo"].data

    def ln(z, scale, offset):
        mu = z.mean(axis=1, keepdims=True)
        var = ((z - mu) ** 2).mean(axis=1, keepdims=True)
        return (z - mu) / np.sqrt(var + 1e-12) * scale + offset

    h1 = ln(h + attn, store["acn.enc.0.ln1.scale"].data, store["acn.enc.0.ln1.offset"].data)
    ff = np.maximum(h1 @ store["acn.enc.0.ff.w1"].data + store["acn.enc.0.ff.b1"].data, 0.0)
    ff = ff @ store["acn.enc.0.ff.w2"].data + store["acn.enc.0.ff.b2"].data
    expected = ln(h1 + ff, store["acn.enc.0.ln2.scale"].data, store["acn.enc.0.ln2.offset"].data)
    assert np.max(np.abs(out.data - expected)) < 1e-12


# -- full ACN --------------------------------------------------------------------


def test_acn_full_width_shape():
    cfg = AcnConfig()
    store = make_store(cfg, audio_dim=512, seed=11)
    out = acn_forward(Tensor(np.random.default_rng(12).standard_normal((9, 512))), store, cfg)
    assert out.data.shape == (9, 512)
    assert np.all(np.isfinite(out.data))


def test_acn_zero_params_final_offset_propagates():
    cfg = small_cfg()
    store = make_store(cfg, audio_dim=6, seed=13)
    offset = np.random.default_rng(14).standard_normal(8)
    for name, t in store.items():
        t.data = np.zeros_like(t.data)
    store[f"acn.enc.{cfg.encoder_layers - 1}.ln2.offset"].data = offset.copy()
    out = acn_forward(Tensor(np.random.default_rng(15).standard_normal((4, 6))), store, cfg)
    np.testing.assert_allclose(out.data, np.tile(offset, (4, 1)), atol=1e-12)


def test_acn_gradients_match_finite_differences():
    cfg = small_cfg()
    store = make_store(cfg, audio_dim=5, seed=16)
    x = np.random.default_rng(17).standard_normal((3, 5))
    # A plain sum is constant through the final unit-scale layer norm
    # (normalized rows sum to zero), so weight the sum to excite every path.
    r = Tensor(np.random.default_rng(18).standard_normal((3, 8)))

    def loss():
        return float(ag.tsum(ag.mul(acn_forward(Tensor(x), store, cfg), r)).data)

    out = ag.tsum(ag.mul(acn_forward(Tensor(x), store, cfg), r))
    ag.backward(out)
    for name in ("acn.conv.w", "acn.lstm.0.fwd.w_i", "acn.lstm.1.bwd.u_f", "acn.enc.0.attn.wq", "acn.enc.2.ff.w1", "acn.enc.1.ln1.scale"):
        p = store[name]
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = fd_input_grad(lambda: loss(), p.data)
        assert_grads_close(analytic, numeric, rtol=1e-5, what=name)


def test_acn_is_order_sensitive():
    cfg = small_cfg()
    for seed in range(20):
        store = make_store(cfg, audio_dim=5, seed=seed)
        rng = np.random.default_rng(100 + seed)
        x = rng.standard_normal((4, 5))
        perm = np.array([1, 2, 3, 0])
        with ag.no_grad():
            out = acn_forward(Tensor(x), store, cfg).data
            out_p = acn_forward(Tensor(x[perm]), store, cfg).data
        assert np.max(np.abs(out_p - out[perm])) > 1e-8, f"seed {seed}: context ignored"


def test_acn_bypass_is_a_linear_map():
    cfg = small_cfg()
    store = make_store(cfg, audio_dim=5, seed=18, no_acn=True)
    x = np.random.default_rng(19).standard_normal((3, 5))
    out = acn_forward(Tensor(x), store, cfg, no_acn=True)
    np.testing.assert_allclose(out.data, x @ store["acn.bypass.w"].data + store["acn.bypass.b"].data, atol=1e-12)
    assert store.names() == ["acn.bypass.w", "acn.bypass.b"]
