"""Pretraining objectives for masked position prediction.

Three nested losses over position logits o of shape (N, N), row i
scoring which patch index the i-th decoder output believes it occupies
(the true class of row i is i):

* ``position_loss``        plain softmax cross-entropy on masked rows
* ``smoothed_loss``        targets softened over neighbouring indices by
                           a row-normalized Gaussian kernel in |i - j|
* ``radarpos_loss``        the smoothed loss additionally weighted per
                           row by the class token's softmaxed cosine
                           similarity to that row's decoder output

All three act only on masked rows and divide by the number of masked
rows ("mean" reduction); pass ``reduction="sum"`` for the raw summed
form. All accept an optional leading batch axis.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DegenerateInputError, DomainError, GradientContractError
from .model import MaskPlan
from .tensor import Tensor


def smoothing_weights(n: int, sigma: float, normalized: bool = True) -> np.ndarray:
    """Gaussian index-distance kernel w(i, j) = exp(-|i - j| / sigma^2).

    With ``normalized`` each row is divided by its sum, making every row
    a probability distribution centred on its own index.
    """
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    idx = np.arange(n, dtype=np.float64)
    dist = np.abs(idx[:, None] - idx[None, :])
    w = np.exp(-dist / (sigma * sigma))
    if normalized:
        w = w / w.sum(axis=1, keepdims=True)
    return w


def _normalize_mask(plan, o_shape) -> np.ndarray:
    """Return float mask flags shaped like o's leading dims + (N,)."""
    n = o_shape[-2]
    if isinstance(plan, MaskPlan):
        flags = plan.flags[None, :] if len(o_shape) == 3 else plan.flags
    elif isinstance(plan, (list, tuple)):
        flags = np.stack([p.flags if isinstance(p, MaskPlan) else np.asarray(p, dtype=bool)
                          for p in plan])
    else:
        flags = np.asarray(plan, dtype=bool)
    expected = o_shape[:-2] + (n,)
    if flags.shape != expected:
        raise GradientContractError(
            f"mask flags shape {flags.shape} incompatible with logits {o_shape}"
        )
    return flags


def _masked_row_mean(row_terms: Tensor, flags: np.ndarray, reduction: str) -> Tensor:
    masked_total = int(flags.sum())
    if masked_total == 0:
        raise GradientContractError("loss undefined with zero masked rows")
    sel = T.mul(row_terms, T.constant(flags.astype(row_terms.dtype)))
    total = sel.sum()
    if reduction == "sum":
        return total
    if reduction == "mean":
        return T.mul_scalar(total, 1.0 / masked_total)
    raise GradientContractError(f"unknown reduction {reduction!r}")


def position_loss(o: Tensor, plan, reduction: str = "mean") -> Tensor:
    """Cross-entropy of softmax(o_i) against the one-hot at index i,
    accumulated over masked rows only."""
    flags = _normalize_mask(plan, o.shape)
    n = o.shape[-1]
    ls = T.log_softmax(o, axis=-1)
    eye = np.broadcast_to(np.eye(n, dtype=o.dtype), o.shape)
    diag = T.mul(ls, T.constant(np.ascontiguousarray(eye))).sum(axis=-1)
    return _masked_row_mean(-diag, flags, reduction)


def smoothed_loss(o: Tensor, plan, w_star: np.ndarray, reduction: str = "mean") -> Tensor:
    """Position loss with targets softened by the row-normalized kernel.

    Row i's target distribution is w_star row i (the row centred at the
    true index). As sigma -> 0 the kernel becomes the identity and this
    collapses to ``position_loss``.
    """
    flags = _normalize_mask(plan, o.shape)
    n = o.shape[-1]
    if w_star.shape != (n, n):
        raise GradientContractError(f"w_star must be ({n}, {n})")
    ls = T.log_softmax(o, axis=-1)
    weights = np.broadcast_to(w_star.astype(o.dtype), o.shape)
    row_terms = -T.mul(ls, T.constant(np.ascontiguousarray(weights))).sum(axis=-1)
    return _masked_row_mean(row_terms, flags, reduction)


def radarpos_loss(o: Tensor, plan, w_star: np.ndarray, attn: Tensor,
                  reduction: str = "mean") -> Tensor:
    """Smoothed loss with each masked row i scaled by attention weight
    attn[i] (the class-token similarity at the row's true index)."""
    flags = _normalize_mask(plan, o.shape)
    n = o.shape[-1]
    if w_star.shape != (n, n):
        raise GradientContractError(f"w_star must be ({n}, {n})")
    if attn.shape != o.shape[:-2] + (n,):
        raise GradientContractError(
            f"attention weights shape {attn.shape} incompatible with logits {o.shape}"
        )
    ls = T.log_softmax(o, axis=-1)
    weights = np.broadcast_to(w_star.astype(o.dtype), o.shape)
    row_terms = -T.mul(ls, T.constant(np.ascontiguousarray(weights))).sum(axis=-1)
    return _masked_row_mean(T.mul(row_terms, attn), flags, reduction)


def attention_weights(cls_out: Tensor, token_outs: Tensor, temperature: float = 0.95) -> Tensor:
    """Per-position weights: softmax over cos(cls, token_i) / temperature.

    ``cls_out`` is (D,) and ``token_outs`` (N, D); the result sums to 1.
    """
    out = attention_weights_batch(
        T.reshape(cls_out, (1,) + cls_out.shape),
        T.reshape(token_outs, (1,) + token_outs.shape),
        temperature,
    )
    return T.reshape(out, out.shape[1:])


def attention_weights_batch(cls_out: Tensor, token_outs: Tensor,
                            temperature: float = 0.95) -> Tensor:
    """Batched form: (B, D) class outputs against (B, N, D) token outputs."""
    if temperature <= 0:
        raise DomainError("temperature must be positive")
    b, n, d = token_outs.shape
    if cls_out.shape != (b, d):
        raise GradientContractError("cls/token shapes disagree")

    ones_rows = T.constant(np.ones((b, n, 1), dtype=token_outs.dtype))
    cls_tiled = T.matmul(ones_rows, T.reshape(cls_out, (b, 1, d)))  # (B, N, D)

    dots = T.mul(cls_tiled, token_outs).sum(axis=-1)  # (B, N)
    tok_sq = T.mul(token_outs, token_outs).sum(axis=-1)
    cls_sq = T.mul(cls_out, cls_out).sum(axis=-1)  # (B,)
    if np.any(tok_sq.data == 0) or np.any(cls_sq.data == 0):
        raise DegenerateInputError("zero-norm vector in cosine similarity")
    tok_norm = T.sqrt(tok_sq)
    cls_norm = T.sqrt(cls_sq)
    ones_cols = T.constant(np.ones((1, n), dtype=token_outs.dtype))
    cls_norm_tiled = T.matmul(T.reshape(cls_norm, (b, 1)), ones_cols)  # (B, N)

    cosine = T.div(dots, T.mul(tok_norm, cls_norm_tiled))
    return T.softmax(T.mul_scalar(cosine, 1.0 / temperature), axis=-1)


def classification_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy against integer labels."""
    if logits.ndim != 2:
        raise GradientContractError("logits must be (batch, classes)")
    b, k = logits.shape
    labels = np.asarray(labels)
    onehot = np.zeros((b, k), dtype=logits.dtype)
    onehot[np.arange(b), labels] = 1.0
    ls = T.log_softmax(logits, axis=-1)
    picked = T.mul(ls, T.constant(onehot)).sum()
    return T.mul_scalar(-picked, 1.0 / b)
