"""Time-aware LSTM with analytic gradients.

Before the usual gate equations, each step decomposes the previous cell
state into a short-term component (a learned tanh projection), discounts
that component by a decay factor of the elapsed days since the previous
visit, and recombines:

    cs     = tanh(c_prev @ Wd + bd)
    c_adj  = c_prev - cs + cs * g(dt)        # g(0) = 1 recovers plain LSTM
    f,i,o  = sigmoid(x @ W. + h_prev @ U. + b.)
    cc     = tanh(x @ Wc + h_prev @ Uc + bc)
    c      = f * c_adj + i * cc
    h      = o * tanh(c)

The classifier head is final-hidden -> tanh FC -> scalar logit. All math is
float64; shapes are annotated as (B)atch, (T)ime, (D)input, (H)idden.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..encoders import SequenceBatch
from ..errors import DataError
from .common import sigmoid

GATES = ("i", "f", "o", "c")


def g_decay(elapsed_days: np.ndarray | float) -> np.ndarray | float:
    """Memory discount 1 / ln(e + dt): exactly 1 at dt=0, strictly decreasing."""
    dt = np.asarray(elapsed_days, dtype=float)
    if np.any(dt < 0):
        raise ValueError("elapsed days must be non-negative")
    out = 1.0 / np.log(np.e + dt)
    return out if out.ndim else float(out)


@dataclass
class TlstmParams:
    input_dim: int
    hidden_dim: int = 128
    fc_dim: int = 64


@dataclass
class TlstmModel:
    input_dim: int
    hidden_dim: int = 128
    fc_dim: int = 64
    seed: int = 0
    params: dict[str, np.ndarray] = field(init=False)

    def __post_init__(self):
        self.init_params(self.seed)

    def init_params(self, seed: int):
        rng = np.random.default_rng(seed)
        D, H, F = self.input_dim, self.hidden_dim, self.fc_dim
        p: dict[str, np.ndarray] = {}
        for gate in GATES:
            p[f"W{gate}"] = rng.normal(0.0, 1.0 / np.sqrt(D), (D, H))
            p[f"U{gate}"] = rng.normal(0.0, 1.0 / np.sqrt(H), (H, H))
            p[f"b{gate}"] = np.zeros(H)
        p["Wd"] = rng.normal(0.0, 1.0 / np.sqrt(H), (H, H))
        p["bd"] = np.zeros(H)
        p["W1"] = rng.normal(0.0, 1.0 / np.sqrt(H), (H, F))
        p["b1"] = np.zeros(F)
        p["w2"] = rng.normal(0.0, 1.0 / np.sqrt(F), (F,))
        p["b2"] = np.zeros(1)
        self.params = p

    def _check_batch(self, batch: SequenceBatch):
        if batch.x.ndim != 3 or batch.x.shape[2] != self.input_dim:
            raise DataError(
                f"sequence batch has input dim {batch.x.shape[-1]}, model expects {self.input_dim}"
            )
        if batch.elapsed.shape != batch.x.shape[:2]:
            raise DataError("elapsed matrix shape does not match the sequence batch")

    def forward(self, batch: SequenceBatch, cache: dict | None = None) -> np.ndarray:
        """Logits (B,). Pass a dict as cache to retain step activations."""
        self._check_batch(batch)
        p = self.params
        B, T, _ = batch.x.shape
        H = self.hidden_dim
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        steps = []
        for t in range(T):
            x_t = batch.x[:, t, :]
            g_t = g_decay(batch.elapsed[:, t])[:, None]  # (B,1)
            cs = np.tanh(c @ p["Wd"] + p["bd"])
            c_adj = c - cs + cs * g_t
            gates = {}
            for gate in GATES:
                z = x_t @ p[f"W{gate}"] + h @ p[f"U{gate}"] + p[f"b{gate}"]
                gates[gate] = np.tanh(z) if gate == "c" else sigmoid(z)
            c_new = gates["f"] * c_adj + gates["i"] * gates["c"]
            tc = np.tanh(c_new)
            h_new = gates["o"] * tc
            if cache is not None:
                steps.append(
                    {"x": x_t, "g": g_t, "cs": cs, "c_prev": c, "h_prev": h,
                     "c_adj": c_adj, "gates": gates, "c": c_new, "tc": tc}
                )
            h, c = h_new, c_new
        a1 = np.tanh(h @ p["W1"] + p["b1"])
        logits = a1 @ p["w2"] + p["b2"][0]
        if cache is not None:
            cache["steps"] = steps
            cache["h_final"] = h
            cache["a1"] = a1
        return logits

    def backward(self, batch: SequenceBatch, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of the scalar loss w.r.t. every parameter."""
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        a1, h_final = cache["a1"], cache["h_final"]

        grads["w2"] = a1.T @ dlogits
        grads["b2"] = np.array([dlogits.sum()])
        da1 = np.outer(dlogits, p["w2"])
        dz1 = da1 * (1.0 - a1 * a1)
        grads["W1"] = h_final.T @ dz1
        grads["b1"] = dz1.sum(axis=0)

        dh = dz1 @ p["W1"].T
        dc = np.zeros_like(dh)
        for step in reversed(cache["steps"]):
            gates, tc = step["gates"], step["tc"]
            do = dh * tc
            dz_o = do * gates["o"] * (1.0 - gates["o"])
            dc = dc + dh * gates["o"] * (1.0 - tc * tc)

            df = dc * step["c_adj"]
            dz_f = df * gates["f"] * (1.0 - gates["f"])
            di = dc * gates["c"]
            dz_i = di * gates["i"] * (1.0 - gates["i"])
            dcc = dc * gates["i"]
            dz_c = dcc * (1.0 - gates["c"] * gates["c"])

            dc_adj = dc * gates["f"]
            dcs = dc_adj * (step["g"] - 1.0)
            dz_d = dcs * (1.0 - step["cs"] * step["cs"])
            grads["Wd"] += step["c_prev"].T @ dz_d
            grads["bd"] += dz_d.sum(axis=0)

            dh_prev = np.zeros_like(dh)
            for gate, dz in (("i", dz_i), ("f", dz_f), ("o", dz_o), ("c", dz_c)):
                grads[f"W{gate}"] += step["x"].T @ dz
                grads[f"U{gate}"] += step["h_prev"].T @ dz
                grads[f"b{gate}"] += dz.sum(axis=0)
                dh_prev += dz @ p[f"U{gate}"].T
            dh = dh_prev
            dc = dc_adj + dz_d @ p["Wd"].T
        return grads

    def scores(self, batches: list[SequenceBatch]) -> tuple[np.ndarray, np.ndarray, list[str]]:
        """Concatenated (logits, labels, ids) over a batch list."""
        logits, labels, ids = [], [], []
        for batch in batches:
            logits.append(self.forward(batch))
            labels.append(batch.y)
            ids.extend(batch.patient_ids)
        return np.concatenate(logits), np.concatenate(labels), ids
