"""Contrastive objectives and their analytic gradients.

Three losses share one primitive: the negative log-probability of designated
positive columns under a row-wise softmax over inner-product logits, computed
with max-subtracted log-sum-exp. Losses are sums over the batch (callers log
per-pair means for comparability across batch sizes). No temperature is
applied unless explicitly requested (tau = 1 leaves logits untouched).
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import DimensionError, NumericError


def nll_from_logits(logits: np.ndarray, positive_sets) -> tuple[float, np.ndarray]:
    """Sum over rows of mean positive-column NLL; returns (loss, dL/dlogits).

    Row i contributes (-1/|P_i|) * sum_{p in P_i} log softmax(logits[i])[p].
    The gradient is softmax(row) - indicator(P_i)/|P_i| per row.
    """
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    work = logits.astype(np.float64, copy=False)
    shifted = work - work.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    softmax = exp / denom
    loss = 0.0
    grad = softmax.copy()
    for i, pos in enumerate(positive_sets):
        pos = np.asarray(pos, dtype=np.int64)
        if pos.size == 0:
            raise ValueError(f"empty positive set for row {i}")
        loss -= log_probs[i, pos].mean()
        grad[i, pos] -= 1.0 / pos.size
    return float(loss), grad.astype(logits.dtype, copy=False)


def loss_contrastive(X: np.ndarray, Y: np.ndarray, temperature: float = 1.0):
    """In-batch contrastive NLL with the diagonal as positives.

    Returns (loss, dX, dY). With N = 1 the loss is identically zero.
    """
    _check_pairwise(X, Y)
    n = X.shape[0]
    if n == 1:
        warnings.warn("contrastive loss over a single pair is identically zero")
    return _grid_loss(X, Y, [np.array([i]) for i in range(n)], temperature)


def loss_cluster(X: np.ndarray, Y: np.ndarray, positive_sets,
                 temperature: float = 1.0):
    """Cluster-supervised contrastive NLL; every P(i) must contain i.

    With singleton positive sets this reduces exactly to loss_contrastive.
    """
    _check_pairwise(X, Y)
    if len(positive_sets) != X.shape[0]:
        raise ValueError("one positive set per batch row required")
    for i, pos in enumerate(positive_sets):
        if len(pos) == 0:
            raise ValueError(f"empty positive set for row {i}")
    return _grid_loss(X, Y, positive_sets, temperature)


def _check_pairwise(X, Y):
    if X.ndim != 2 or Y.ndim != 2 or X.shape != Y.shape:
        raise DimensionError(f"batch shapes must match: {X.shape} vs {Y.shape}")


def _grid_loss(X, Y, positive_sets, temperature):
    inv_t = 1.0 / temperature
    logits = (X @ Y.T) * inv_t
    loss, d_logits = nll_from_logits(logits, positive_sets)
    d_logits = d_logits * inv_t
    dX = d_logits @ Y
    dY = d_logits.T @ X
    return loss, dX.astype(X.dtype, copy=False), dY.astype(Y.dtype, copy=False)


def loss_label(H: np.ndarray, H_plus: np.ndarray, Y_neg: np.ndarray,
               temperature: float = 1.0):
    """Label-regularization NLL: pull h toward its dropout duplicate, push from
    M sampled real labels.

    Per row the positive logit is h_i . h_i_plus and the negatives are
    h_i . y_j. Returns (loss, dH, dH_plus, dY_neg).
    """
    if H.shape != H_plus.shape:
        raise DimensionError(f"H and H_plus must match: {H.shape} vs {H_plus.shape}")
    if Y_neg.ndim != 2 or Y_neg.shape[1] != H.shape[1]:
        raise DimensionError(f"negative labels shape {Y_neg.shape} incompatible with d={H.shape[1]}")
    if Y_neg.shape[0] < 1:
        raise ValueError("at least one negative label is required")
    inv_t = 1.0 / temperature
    pos_col = np.einsum("nd,nd->n", H, H_plus)[:, None]
    neg_cols = H @ Y_neg.T
    logits = np.concatenate([pos_col, neg_cols], axis=1) * inv_t
    n = H.shape[0]
    loss, d_logits = nll_from_logits(logits, [np.array([0])] * n)
    d_logits = d_logits * inv_t
    d_pos = d_logits[:, :1]
    d_neg = d_logits[:, 1:]
    dH = d_pos * H_plus + d_neg @ Y_neg
    dH_plus = d_pos * H
    dY_neg = d_neg.T @ H
    return (loss, dH.astype(H.dtype, copy=False),
            dH_plus.astype(H.dtype, copy=False),
            dY_neg.astype(Y_neg.dtype, copy=False))


def loss_stage1(cluster_part: float, label_part: float) -> float:
    """Pre-training objective: unweighted sum of the two parts."""
    return cluster_part + label_part
