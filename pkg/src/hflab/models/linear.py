"""Linear classifiers over one-hot vectors: logistic loss or hinge loss.

The hinge variant is the kernel-free stand-in for an SVM, trained by
sub-gradient descent; probabilities come from the sigmoid of the score
for both losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .common import bce_with_logits, sample_weights


class LossKind(str, Enum):
    LOGISTIC = "LOGISTIC"
    HINGE = "HINGE"


@dataclass
class LinearParams:
    weights: np.ndarray
    bias: float
    loss: LossKind = LossKind.LOGISTIC
    l2: float = 0.0


@dataclass
class LinearModel:
    dim: int
    loss: LossKind = LossKind.LOGISTIC
    l2: float = 0.0
    params: dict[str, np.ndarray] = field(init=False)

    def __post_init__(self):
        self.params = {"w": np.zeros(self.dim), "b": np.zeros(1)}

    def init_params(self, seed: int):
        # Zero init is the deterministic convex-problem convention.
        self.params = {"w": np.zeros(self.dim), "b": np.zeros(1)}

    def scores(self, X: np.ndarray) -> np.ndarray:
        return X @ self.params["w"] + self.params["b"][0]

    def loss_and_grads(
        self, X: np.ndarray, y: np.ndarray, class_weight: float | None = None
    ) -> tuple[float, dict[str, np.ndarray]]:
        w = self.params["w"]
        s = self.scores(X)
        weights = sample_weights(y, class_weight)
        if self.loss == LossKind.LOGISTIC:
            loss, ds = bce_with_logits(s, y, weights)
        else:
            ypm = 2.0 * y - 1.0  # {0,1} -> {-1,+1}
            margin = 1.0 - ypm * s
            active = (margin > 0).astype(float)
            if weights is None:
                weights = np.ones_like(s)
            n = len(s)
            loss = float(np.sum(weights * np.maximum(margin, 0.0)) / n)
            ds = -weights * ypm * active / n
        grads = {
            "w": X.T @ ds + 2.0 * self.l2 * w,
            "b": np.array([ds.sum()]),
        }
        loss += float(self.l2 * np.dot(w, w))
        return loss, grads

    def export_params(self) -> LinearParams:
        return LinearParams(weights=self.params["w"].copy(), bias=float(self.params["b"][0]), loss=self.loss, l2=self.l2)
