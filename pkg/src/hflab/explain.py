"""Local surrogate explanations over narrative segments.

Perturbs a narrative by dropping comma-delimited segments, scores the model
on each perturbation, and fits a ridge-regularized linear surrogate on the
binary masks, weighted by similarity to the unperturbed text. Surrogate
coefficients are the segment importances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

KERNEL_WIDTH = 0.25
RIDGE_ALPHA = 1e-6
MIN_SAMPLES = 50


@dataclass
class Explanation:
    segments: list[tuple[str, float]]  # (text span, importance) in original order
    original_score: float
    seed: int
    n_samples: int

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.segments, key=lambda sw: -abs(sw[1]))

    def top_indices(self, k: int) -> list[int]:
        order = sorted(range(len(self.segments)), key=lambda i: -abs(self.segments[i][1]))
        return order[:k]


def split_segments(text: str) -> list[str]:
    return text.split(",")


def _kernel_weights(masks: np.ndarray) -> np.ndarray:
    # cosine distance between each mask and the all-ones mask; the all-zeros
    # mask has no direction, so it sits at the maximum distance 1.
    k = masks.shape[1]
    kept = masks.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where(kept > 0, np.sqrt(kept / k), 0.0)
    dist = 1.0 - cos
    return np.exp(-(dist**2) / KERNEL_WIDTH**2)


def lime_explain(
    model: Callable[[str], float],
    text: str,
    n_samples: int = 200,
    seed: int = 0,
    ridge_alpha: float = RIDGE_ALPHA,
) -> Explanation:
    """Explain model(text) as additive segment importances.

    The sample set always contains the all-ones and all-zeros masks; the
    remaining masks are uniform random. Deterministic per seed.
    """
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"n_samples must be >= {MIN_SAMPLES}")
    segments = split_segments(text)
    k = len(segments)
    if k < 2:
        raise ValueError("narrative must split into at least 2 comma-delimited segments")

    rng = np.random.default_rng(seed)
    masks = np.ones((n_samples, k))
    masks[1] = 0.0
    masks[2:] = (rng.random((n_samples - 2, k)) < 0.5).astype(float)

    scores = np.empty(n_samples)
    for i, mask in enumerate(masks):
        kept = [seg for seg, keep in zip(segments, mask) if keep]
        scores[i] = model(",".join(kept))

    weights = _kernel_weights(masks)
    # weighted ridge with unregularized intercept
    Z = np.hstack([masks, np.ones((n_samples, 1))])
    WZ = Z * weights[:, None]
    A = Z.T @ WZ
    reg = np.eye(k + 1) * ridge_alpha
    reg[-1, -1] = 0.0
    beta = np.linalg.solve(A + reg, WZ.T @ scores)

    return Explanation(
        segments=[(seg, float(w)) for seg, w in zip(segments, beta[:k])],
        original_score=float(scores[0]),
        seed=seed,
        n_samples=n_samples,
    )


def explanation_to_json(exp: Explanation) -> str:
    return json.dumps(
        {
            "original_score": exp.original_score,
            "seed": exp.seed,
            "n_samples": exp.n_samples,
            "segments": [{"text": s, "importance": w} for s, w in exp.segments],
        },
        sort_keys=True,
        indent=2,
    )


def render_explanation(exp: Explanation) -> str:
    """Plot-free text rendering: intensity markers scale with |importance|."""
    max_abs = max((abs(w) for _, w in exp.segments), default=0.0) or 1.0
    lines = [f"model score: {exp.original_score:.6f}"]
    for seg, w in exp.segments:
        level = int(round(3 * abs(w) / max_abs))
        marker = ("+" if w >= 0 else "-") * level
        lines.append(f"[{marker:<3}] {w:+.4f}  {seg.strip()}")
    return "\n".join(lines) + "\n"


def write_explanation(exp: Explanation, json_path: str | Path, text_path: str | Path):
    Path(json_path).write_text(explanation_to_json(exp), encoding="utf-8")
    Path(text_path).write_text(render_explanation(exp), encoding="utf-8")
