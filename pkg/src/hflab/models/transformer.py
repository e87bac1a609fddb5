"""Tiny trained-from-scratch transformer encoder with analytic gradients.

Post-norm encoder stack: token + learned positional embeddings, then per
layer multi-head self-attention and a GELU feed-forward block, each wrapped
in residual + layer normalization. Padding positions are masked out of
attention as keys in every layer, and the classifier reads the first
([CLS]) position only, so pad content cannot reach the logit.

Shapes are annotated as (B)atch, (T)ime, (d) model width, (h) heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import DataError
from .common import sigmoid

_MASK_BIAS = -1e30
_LN_EPS = 1e-5
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def _gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """tanh-approximate GELU and its derivative (smooth, so finite
    differences stay clean)."""
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return y, dy


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(dy: np.ndarray, g: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


@dataclass
class TokenBatch:
    ids: np.ndarray  # (B, T) int piece ids, padded
    mask: np.ndarray  # (B, T) 1.0 for real positions
    y: np.ndarray  # (B,)
    patient_ids: list[str]


def pad_token_batch(
    sequences: Sequence[Sequence[int]],
    labels: Sequence[float],
    patient_ids: Sequence[str],
    pad_id: int,
) -> TokenBatch:
    T = max(len(s) for s in sequences)
    B = len(sequences)
    ids = np.full((B, T), pad_id, dtype=np.int64)
    mask = np.zeros((B, T))
    for i, s in enumerate(sequences):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return TokenBatch(ids=ids, mask=mask, y=np.asarray(labels, dtype=float), patient_ids=list(patient_ids))


@dataclass
class TransformerParams:
    vocab_size: int
    max_len: int = 512
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int | None = None  # defaults to 4 * d_model

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.ff_dim is None:
            self.ff_dim = 4 * self.d_model


@dataclass
class TransformerModel:
    spec: TransformerParams
    seed: int = 0
    dtype: np.dtype = np.float64  # float32 acceptable for training runs
    params: dict[str, np.ndarray] = field(init=False)

    def __post_init__(self):
        self.init_params(self.seed)

    def init_params(self, seed: int):
        rng = np.random.default_rng(seed)
        s = self.spec
        d, F = s.d_model, s.ff_dim
        p: dict[str, np.ndarray] = {
            "tok_emb": rng.normal(0.0, 0.02, (s.vocab_size, d)),
            "pos_emb": rng.normal(0.0, 0.02, (s.max_len, d)),
            "w_cls": rng.normal(0.0, 1.0 / np.sqrt(d), (d,)),
            "b_cls": np.zeros(1),
        }
        for l in range(s.n_layers):
            for name in ("Wq", "Wk", "Wv", "Wo"):
                p[f"{name}{l}"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, d))
                p[f"b{name[1].lower()}{l}"] = np.zeros(d)
            p[f"ln1_g{l}"] = np.ones(d)
            p[f"ln1_b{l}"] = np.zeros(d)
            p[f"W1{l}"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, F))
            p[f"b1{l}"] = np.zeros(F)
            p[f"W2{l}"] = rng.normal(0.0, 1.0 / np.sqrt(F), (F, d))
            p[f"b2{l}"] = np.zeros(d)
            p[f"ln2_g{l}"] = np.ones(d)
            p[f"ln2_b{l}"] = np.zeros(d)
        self.params = {k: v.astype(self.dtype) for k, v in p.items()}

    # -- forward ----------------------------------------------------------

    def forward(self, batch: TokenBatch, cache: dict | None = None) -> np.ndarray:
        p = self.params
        s = self.spec
        ids, mask = batch.ids, batch.mask
        if ids.max() >= s.vocab_size or ids.min() < 0:
            raise DataError("token id out of vocabulary range")
        B, T = ids.shape
        if T > s.max_len:
            raise DataError(f"sequence length {T} exceeds max_len {s.max_len}")
        h, dk = s.n_heads, s.d_model // s.n_heads
        dtype = p["tok_emb"].dtype
        scale = dtype.type(1.0 / np.sqrt(dk))
        key_bias = ((1.0 - mask)[:, None, None, :] * _MASK_BIAS).astype(dtype)  # (B,1,1,T)

        x = p["tok_emb"][ids] + p["pos_emb"][:T]
        layers = []
        for l in range(s.n_layers):
            q = (x @ p[f"Wq{l}"] + p[f"bq{l}"]).reshape(B, T, h, dk).transpose(0, 2, 1, 3)
            k = (x @ p[f"Wk{l}"] + p[f"bk{l}"]).reshape(B, T, h, dk).transpose(0, 2, 1, 3)
            v = (x @ p[f"Wv{l}"] + p[f"bv{l}"]).reshape(B, T, h, dk).transpose(0, 2, 1, 3)
            scores = q @ k.transpose(0, 1, 3, 2) * scale + key_bias  # (B,h,T,T)
            scores -= scores.max(axis=-1, keepdims=True)
            e = np.exp(scores)
            attn = e / e.sum(axis=-1, keepdims=True)
            ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, s.d_model)
            attn_out = ctx @ p[f"Wo{l}"] + p[f"bo{l}"]
            x1, ln1_cache = _layer_norm(x + attn_out, p[f"ln1_g{l}"], p[f"ln1_b{l}"])
            z1 = x1 @ p[f"W1{l}"] + p[f"b1{l}"]
            a1, da1 = _gelu(z1)
            ff = a1 @ p[f"W2{l}"] + p[f"b2{l}"]
            x2, ln2_cache = _layer_norm(x1 + ff, p[f"ln2_g{l}"], p[f"ln2_b{l}"])
            if cache is not None:
                layers.append(
                    {"x_in": x, "q": q, "k": k, "v": v, "attn": attn, "ctx": ctx,
                     "ln1": ln1_cache, "x1": x1, "a1": a1, "da1": da1, "ln2": ln2_cache}
                )
            x = x2
        logits = x[:, 0, :] @ p["w_cls"] + p["b_cls"][0]
        if cache is not None:
            cache["layers"] = layers
            cache["x_out"] = x
            cache["ids"] = ids
            cache["scale"] = scale
        return logits

    # -- backward ---------------------------------------------------------

    def backward(self, batch: TokenBatch, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        s = self.spec
        dlogits = np.asarray(dlogits, dtype=p["w_cls"].dtype)
        ids = cache["ids"]
        B, T = ids.shape
        h, dk = s.n_heads, s.d_model // s.n_heads
        scale = cache["scale"]
        grads = {k: np.zeros_like(v) for k, v in p.items()}

        x_out = cache["x_out"]
        grads["w_cls"] = x_out[:, 0, :].T @ dlogits
        grads["b_cls"] = np.array([dlogits.sum()])
        dx = np.zeros_like(x_out)
        dx[:, 0, :] = np.outer(dlogits, p["w_cls"])

        for l in reversed(range(s.n_layers)):
            c = cache["layers"][l]
            dres2, dg, db = _layer_norm_backward(dx, p[f"ln2_g{l}"], c["ln2"])
            grads[f"ln2_g{l}"] += dg
            grads[f"ln2_b{l}"] += db
            # ff branch: x2_pre = x1 + gelu(x1 W1 + b1) W2 + b2
            dff = dres2
            grads[f"W2{l}"] += np.einsum("btf,btd->fd", c["a1"], dff)
            grads[f"b2{l}"] += dff.sum(axis=(0, 1))
            dz1 = (dff @ p[f"W2{l}"].T) * c["da1"]
            grads[f"W1{l}"] += np.einsum("btd,btf->df", c["x1"], dz1)
            grads[f"b1{l}"] += dz1.sum(axis=(0, 1))
            dx1 = dres2 + dz1 @ p[f"W1{l}"].T

            dres1, dg, db = _layer_norm_backward(dx1, p[f"ln1_g{l}"], c["ln1"])
            grads[f"ln1_g{l}"] += dg
            grads[f"ln1_b{l}"] += db
            # attention branch: x1_pre = x_in + (attn @ v -> ctx) Wo + bo
            dattn_out = dres1
            grads[f"Wo{l}"] += np.einsum("btd,bte->de", c["ctx"], dattn_out)
            grads[f"bo{l}"] += dattn_out.sum(axis=(0, 1))
            dctx = (dattn_out @ p[f"Wo{l}"].T).reshape(B, T, h, dk).transpose(0, 2, 1, 3)

            dP = dctx @ c["v"].transpose(0, 1, 3, 2)  # (B,h,T,T)
            dV = c["attn"].transpose(0, 1, 3, 2) @ dctx
            attn = c["attn"]
            dS = attn * (dP - (dP * attn).sum(axis=-1, keepdims=True))
            dQ = dS @ c["k"] * scale
            dK = dS.transpose(0, 1, 3, 2) @ c["q"] * scale

            x_in = c["x_in"]
            dx = dres1  # residual path
            for name, dmat in (("Wq", dQ), ("Wk", dK), ("Wv", dV)):
                flat = dmat.transpose(0, 2, 1, 3).reshape(B, T, s.d_model)
                grads[f"{name}{l}"] += np.einsum("btd,bte->de", x_in, flat)
                grads[f"b{name[1].lower()}{l}"] += flat.sum(axis=(0, 1))
                dx = dx + flat @ p[f"{name}{l}"].T

        np.add.at(grads["tok_emb"], ids, dx)
        grads["pos_emb"][:T] += dx.sum(axis=0)
        return grads

    def scores(self, batches: Sequence[TokenBatch]) -> tuple[np.ndarray, np.ndarray, list[str]]:
        logits, labels, ids = [], [], []
        for batch in batches:
            logits.append(self.forward(batch))
            labels.append(batch.y)
            ids.extend(batch.patient_ids)
        return np.concatenate(logits), np.concatenate(labels), ids

    def predict_proba_ids(self, token_ids: Sequence[int], pad_id: int) -> float:
        batch = pad_token_batch([list(token_ids)], [0.0], ["_"], pad_id)
        return float(sigmoid(self.forward(batch))[0])
