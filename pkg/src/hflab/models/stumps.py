"""Gradient-boosted depth-1 trees with logistic loss and Newton leaf values.

A deliberately small stand-in for full second-order tree boosting: each
round fits one stump on gradient/hessian statistics, leaves are shrunk by
the learning rate, and ties in split gain go to the lowest feature index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .common import sigmoid

MAX_CONTINUOUS_THRESHOLDS = 32


@dataclass
class Stump:
    feature: int
    threshold: float
    left_value: float  # x[feature] < threshold
    right_value: float


@dataclass
class StumpEnsemble:
    stumps: list[Stump]
    base_score: float
    learning_rate: float
    n_rounds: int

    def scores(self, X: np.ndarray) -> np.ndarray:
        s = np.full(len(X), self.base_score)
        for st in self.stumps:
            left = X[:, st.feature] < st.threshold
            s += np.where(left, st.left_value, st.right_value)
        return s

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.scores(X))


def _candidate_thresholds(col: np.ndarray) -> np.ndarray:
    values = np.unique(col)
    if len(values) <= 1:
        return np.empty(0)
    if len(values) > MAX_CONTINUOUS_THRESHOLDS + 1:
        qs = np.linspace(0, 1, MAX_CONTINUOUS_THRESHOLDS + 1)
        values = np.unique(np.quantile(values, qs))
    return (values[:-1] + values[1:]) / 2.0


def _best_split(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, reg_lambda: float
) -> tuple[float, int, float, float, float] | None:
    """Exhaustive stump search; returns (gain, feature, threshold, wl, wr)."""
    G, H = g.sum(), h.sum()
    parent = G * G / (H + reg_lambda)
    best = None
    for j in range(X.shape[1]):
        for thr in _candidate_thresholds(X[:, j]):
            left = X[:, j] < thr
            Gl, Hl = g[left].sum(), h[left].sum()
            Gr, Hr = G - Gl, H - Hl
            gain = 0.5 * (Gl * Gl / (Hl + reg_lambda) + Gr * Gr / (Hr + reg_lambda) - parent)
            # strict > keeps the lowest (feature, threshold) on ties
            if best is None or gain > best[0] + 1e-12:
                wl = -Gl / (Hl + reg_lambda)
                wr = -Gr / (Hr + reg_lambda)
                best = (gain, j, float(thr), wl, wr)
    return best


def train_boosted_stumps(
    X: np.ndarray,
    y: np.ndarray,
    n_rounds: int = 50,
    learning_rate: float = 0.3,
    reg_lambda: float = 1.0,
    min_gain: float = 1e-9,
) -> StumpEnsemble:
    """Fit the ensemble; rounds stop early once no split has positive gain.

    Constant labels (or constant features) yield a bias-only model.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = float(np.clip(y.mean(), 1e-6, 1.0 - 1e-6))
    base = float(np.log(p / (1.0 - p)))
    ensemble = StumpEnsemble(stumps=[], base_score=base, learning_rate=learning_rate, n_rounds=n_rounds)
    scores = np.full(len(X), base)
    for _ in range(n_rounds):
        prob = sigmoid(scores)
        g = prob - y
        h = prob * (1.0 - prob)
        found = _best_split(X, g, h, reg_lambda)
        if found is None or found[0] <= min_gain:
            break
        _, j, thr, wl, wr = found
        stump = Stump(feature=j, threshold=thr, left_value=learning_rate * wl, right_value=learning_rate * wr)
        ensemble.stumps.append(stump)
        left = X[:, j] < thr
        scores += np.where(left, stump.left_value, stump.right_value)
    return ensemble
