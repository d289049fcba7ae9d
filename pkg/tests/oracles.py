"""Independent scalar-loop oracles.

Deliberately naive: explicit Python loops and math.* calls, no shared code
with the library.  These are the second route of every dual-route check.
"""

from __future__ import annotations

import math

import numpy as np


def naive_conv1d(x, w, b):
    """x: (N, D); w: (K, D, F); b: (F,). Zero padding, stride 1."""
    n, d = x.shape
    k, _, f = w.shape
    half = k // 2
    out = np.zeros((n, f))
    for t in range(n):
        for j in range(f):
            acc = b[j]
            for tap in range(k):
                src = t + tap - half
                if 0 <= src < n:
                    for c in range(d):
                        acc += x[src, c] * w[tap, c, j]
            out[t, j] = acc
    return out


def _sig(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def naive_lstm_direction(x, p, units, reverse=False):
    """Single LSTM direction. p maps gate name -> (w, u, b) for i, f, g, o."""
    n = x.shape[0]
    h = np.zeros(units)
    c = np.zeros(units)
    out = np.zeros((n, units))
    steps = range(n - 1, -1, -1) if reverse else range(n)
    for t in steps:
        pre = {}
        for gate in "ifgo":
            w, u, b = p[gate]
            pre[gate] = np.array(
                [sum(x[t, a] * w[a, j] for a in range(x.shape[1])) + sum(h[a] * u[a, j] for a in range(units)) + b[j] for j in range(units)]
            )
        i = np.array([_sig(v) for v in pre["i"]])
        f = np.array([_sig(v) for v in pre["f"]])
        g = np.array([math.tanh(v) for v in pre["g"]])
        o = np.array([_sig(v) for v in pre["o"]])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


def naive_bilstm(x, layer_params, units):
    """Stacked bidirectional LSTM; layer_params[l]['fwd'/'bwd'] like above."""
    cur = x
    for lp in layer_params:
        fwd = naive_lstm_direction(cur, lp["fwd"], units, reverse=False)
        bwd = naive_lstm_direction(cur, lp["bwd"], units, reverse=True)
        cur = np.concatenate([fwd, bwd], axis=1)
    return cur


def naive_gru_step(h, x, p):
    """p maps gate -> (w, u, b) for z, r, n; candidate resets h before u_n."""
    units = h.shape[0]
    pre = {}
    for gate in "zr":
        w, u, b = p[gate]
        pre[gate] = np.array(
            [sum(x[a] * w[a, j] for a in range(x.shape[0])) + sum(h[a] * u[a, j] for a in range(units)) + b[j] for j in range(units)]
        )
    z = np.array([_sig(v) for v in pre["z"]])
    r = np.array([_sig(v) for v in pre["r"]])
    w, u, b = p["n"]
    rh = r * h
    pre_n = np.array(
        [sum(x[a] * w[a, j] for a in range(x.shape[0])) + sum(rh[a] * u[a, j] for a in range(units)) + b[j] for j in range(units)]
    )
    n = np.array([math.tanh(v) for v in pre_n])
    return (1.0 - z) * h + z * n


def naive_softmax(scores):
    m = max(scores)
    es = [math.exp(s - m) for s in scores]
    z = sum(es)
    return np.array([e / z for e in es])


def naive_attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v, row by row."""
    n, d = q.shape
    out = np.zeros((n, v.shape[1]))
    for i in range(n):
        scores = [sum(q[i, a] * k[j, a] for a in range(d)) / math.sqrt(d) for j in range(k.shape[0])]
        w = naive_softmax(scores)
        for c in range(v.shape[1]):
            out[i, c] = sum(w[j] * v[j, c] for j in range(v.shape[0]))
    return out


def naive_weighted_f1(y_true, y_pred, n_classes):
    total = len(y_true)
    wf1 = 0.0
    for c in range(n_classes):
        tp = fp = fn = 0
        for t, p in zip(y_true, y_pred):
            if p == c and t == c:
                tp += 1
            elif p == c:
                fp += 1
            elif t == c:
                fn += 1
        support = tp + fn
        prec = tp / (tp + fp) if tp + fp > 0 else 0.0
        rec = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        wf1 += (support / total) * f1
    return wf1


def naive_cross_entropy(probs, labels):
    return sum(-math.log(probs[i, labels[i]]) for i in range(len(labels))) / len(labels)


def linear_probe_accuracy(x, y, n_classes):
    """Least-squares one-hot probe, evaluated on its own training set."""
    xb = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    onehot = np.zeros((x.shape[0], n_classes))
    onehot[np.arange(x.shape[0]), y] = 1.0
    w, *_ = np.linalg.lstsq(xb, onehot, rcond=None)
    pred = (xb @ w).argmax(axis=1)
    return float((pred == y).mean())


def fd_input_grad(fn, x, rel_step=1e-5):
    """Central finite differences of scalar fn w.r.t. array x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = rel_step * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def assert_grads_close(analytic, numeric, rtol=1e-5, atol=1e-8, what=""):
    """Relative check with an absolute floor for central-difference roundoff."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    err = np.abs(a - n) - atol - rtol * np.maximum(np.abs(a), np.abs(n))
    if np.any(err > 0):
        i = np.unravel_index(np.argmax(err), a.shape)
        raise AssertionError(f"{what} gradient mismatch at {i}: analytic={a[i]:.9e} numeric={n[i]:.9e}")
