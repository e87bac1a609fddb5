"""Independent reference implementations used as test oracles only."""

import numpy as np


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def standard_lstm_logits(params, x, y_unused=None):
    """Plain LSTM forward with the same parameter layout as the time-aware
    model but no cell-state decomposition. Written independently (explicit
    loops) so it can serve as an oracle."""
    B, T, D = x.shape
    H = params["Wi"].shape[1]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        xt = x[:, t, :]
        i = sigmoid(xt @ params["Wi"] + h @ params["Ui"] + params["bi"])
        f = sigmoid(xt @ params["Wf"] + h @ params["Uf"] + params["bf"])
        o = sigmoid(xt @ params["Wo"] + h @ params["Uo"] + params["bo"])
        cc = np.tanh(xt @ params["Wc"] + h @ params["Uc"] + params["bc"])
        c = f * c + i * cc
        h = o * np.tanh(c)
    a1 = np.tanh(h @ params["W1"] + params["b1"])
    return a1 @ params["w2"] + params["b2"][0]


def finite_difference_grads(loss_fn, params, eps=1e-5):
    """Central finite differences of loss_fn() w.r.t. every entry of every
    parameter array (mutates and restores in place)."""
    grads = {}
    for name, p in params.items():
        fd = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + eps
            lp = loss_fn()
            p[idx] = orig - eps
            lm = loss_fn()
            p[idx] = orig
            fd[idx] = (lp - lm) / (2 * eps)
        grads[name] = fd
    return grads


def max_relative_error(analytic, numeric):
    """Worst-entry relative error with a small-magnitude floor (keeps
    float64 rounding noise on near-zero entries from dominating)."""
    worst = 0.0
    for name in analytic:
        a, b = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
        worst = max(worst, float((np.abs(a - b) / denom).max()))
    return worst
