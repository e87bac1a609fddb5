"""Shared numeric helpers for the model family."""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def bce_with_logits(logits: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy on logits; returns (loss, dloss/dlogits).

    softplus(z) - y*z is the numerically stable form; weights rescale
    per-sample contributions (used for optional class weighting).
    """
    z = np.asarray(logits, dtype=float)
    y = np.asarray(y, dtype=float)
    softplus = np.logaddexp(0.0, z)
    per_sample = softplus - y * z
    if weights is None:
        weights = np.ones_like(z)
    n = len(z)
    loss = float(np.sum(weights * per_sample) / n)
    dlogits = weights * (sigmoid(z) - y) / n
    return loss, dlogits


def sample_weights(y: np.ndarray, class_weight: float | None) -> np.ndarray | None:
    """Positive-class weight vector, or None when weighting is off."""
    if class_weight is None:
        return None
    y = np.asarray(y, dtype=float)
    return np.where(y > 0.5, float(class_weight), 1.0)
