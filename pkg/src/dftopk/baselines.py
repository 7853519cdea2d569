"""Soft-permutation baselines: NeuralSort and SoftSort.

Both build an N x N row-stochastic matrix ``P`` whose entry ``(i, j)`` is the
relaxed probability that item ``j`` holds rank ``i`` (rank 0 = largest).

    NeuralSort:  P[i] = softmax(((N + 1 - 2(i+1)) x - A 1) / tau),  A_jl = |x_j - x_l|
    SoftSort:    P[i] = softmax(-|sort_desc(x)_i - x| / tau)

A Top-K objective is read off the first K rows (expected number of
positives among the top K ranks). Backward passes are written out by hand;
everything is O(N^2) in time and memory.
"""

from __future__ import annotations

import numpy as np
from scipy.special import softmax

from dftopk.core import (
    TopKConfig,
    ValidationError,
    as_labels,
    as_scores,
    check_k,
    dftopk_vjp,
    select_rank_pair,
)

KINDS = ("neuralsort", "softsort")


def _check_tau(tau):
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")


def _rank_coeffs(n, rows):
    # N + 1 - 2i for 1-based rank i
    return (n + 1 - 2 * np.arange(1, rows + 1)).astype(np.float64)


def _neuralsort_logits(x, tau, rows):
    # Raw logits reach |N x / tau|; rounding them in float64 perturbs P by
    # ~1e-12 relative at tau = 1e-3. Forming them in extended precision and
    # centering each row before the cast keeps the kept digits meaningful.
    n = x.shape[-1]
    xl = x.astype(np.longdouble)
    b = np.abs(xl[..., :, None] - xl[..., None, :]).sum(axis=-1)
    a = _rank_coeffs(n, rows).astype(np.longdouble)
    z = a[:, None] * xl[..., None, :] - b[..., None, :]
    z -= z.max(axis=-1, keepdims=True)
    return (z / tau).astype(np.float64)


def _desc_order(x):
    # stable, so equal scores keep index order
    return np.argsort(-x, axis=-1, kind="stable")


def _softsort_logits(x, tau, rows):
    order = _desc_order(x)[..., :rows]
    s = np.take_along_axis(x, order, axis=-1)
    return -np.abs(s[..., :, None] - x[..., None, :]) / tau, order


def neuralsort_forward(x, tau=1.0, rows=None):
    """NeuralSort soft permutation (first ``rows`` ranks, default all)."""
    x = as_scores(x)
    _check_tau(tau)
    rows = x.shape[-1] if rows is None else rows
    return softmax(_neuralsort_logits(x, tau, rows), axis=-1)


def softsort_forward(x, tau=1.0, rows=None):
    """SoftSort soft permutation (first ``rows`` ranks, default all)."""
    x = as_scores(x)
    _check_tau(tau)
    rows = x.shape[-1] if rows is None else rows
    logits, _ = _softsort_logits(x, tau, rows)
    return softmax(logits, axis=-1)


def soft_permutation(x, tau, kind, rows=None):
    if kind == "neuralsort":
        return neuralsort_forward(x, tau, rows)
    if kind == "softsort":
        return softsort_forward(x, tau, rows)
    raise ValidationError(f"unknown permutation kind {kind!r}")


def hard_permutation(x):
    """0/1 permutation matrix of the descending sort (lower index wins ties)."""
    x = as_scores(x)
    order = _desc_order(x)
    n = x.shape[-1]
    return (order[..., :, None] == np.arange(n)).astype(np.float64)


def expected_topk(P, y, K):
    """Expected count of positives among the top-K ranks: sum_j y_j sum_{i<K} P_ij."""
    P = np.asarray(P, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = P.shape[-1]
    if y.shape[-1] != n or P.shape[-2] < min(K, n):
        raise ValidationError(f"P {P.shape} and labels {y.shape} do not agree")
    if not 1 <= K <= n:
        raise ValidationError(f"K={K} outside [1, {n}]")
    out = (P[..., :K, :].sum(axis=-2) * y).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def permutation_loss(x, y, K, tau=1.0, kind="neuralsort"):
    """Negative expected-TopK under the chosen soft permutation."""
    x = as_scores(x)
    y = as_labels(y, x.shape)
    P = soft_permutation(x, tau, kind, rows=K)
    return -expected_topk(P, y, K)


def _expected_topk_logit_grad(P, y):
    """d(-expected_topk)/d logits for every row.

    The generic softmax backward ``P * (G - sum(G P))`` with ``G = -y``
    cancels catastrophically in saturated rows; the complement form below
    is exact in both tails.
    """
    y = y[..., None, :]
    mass_pos = (P * y).sum(axis=-1, keepdims=True)
    mass_neg = (P * (1.0 - y)).sum(axis=-1, keepdims=True)
    return P * np.where(y > 0, -mass_neg, mass_pos)


def permutation_loss_backward(x, y, K, tau=1.0, kind="neuralsort"):
    """Gradient of :func:`permutation_loss` with respect to the scores."""
    x = as_scores(x)
    y = as_labels(y, x.shape)
    _check_tau(tau)
    n = x.shape[-1]
    if kind == "neuralsort":
        logits = _neuralsort_logits(x, tau, K)
    elif kind == "softsort":
        logits, order = _softsort_logits(x, tau, K)
    else:
        raise ValidationError(f"unknown permutation kind {kind!r}")
    P = softmax(logits, axis=-1)
    gz = _expected_topk_logit_grad(P, y)

    if kind == "neuralsort":
        a = _rank_coeffs(n, K)
        sgn = np.sign(x[..., :, None] - x[..., None, :])  # sgn[j, m] = sign(x_j - x_m)
        col = gz.sum(axis=-2)
        s = sgn.sum(axis=-1)
        grad = (
            np.einsum("...im,i->...m", gz, a)
            - col * s
            + np.einsum("...j,...jm->...m", col, sgn)
        )
        return grad / tau

    s = np.take_along_axis(x, order, axis=-1)
    d = gz * np.sign(s[..., :, None] - x[..., None, :])
    grad = d.sum(axis=-2)
    row = d.sum(axis=-1)
    if x.ndim == 1:
        np.add.at(grad, order, -row)
    else:
        b = np.arange(x.shape[0])[:, None]
        np.add.at(grad, (np.broadcast_to(b, order.shape), order), -row)
    return grad / tau


def _logit_jacobian(x, tau, K, kind):
    """Z[i, j, m] = d logit_ij / d x_m for the first K rows (single vector)."""
    n = x.size
    eye = np.eye(n)
    if kind == "neuralsort":
        a = _rank_coeffs(n, K)
        sgn = np.sign(x[:, None] - x[None, :])
        s = sgn.sum(axis=1)
        base = sgn - eye * s[:, None]  # d(-B_j)/dx_m
        return (a[:, None, None] * eye[None] + base[None]) / tau
    order = _desc_order(x)[:K]
    s = x[order]
    sg = np.sign(s[:, None] - x[None, :])  # (K, N) over j
    return -sg[:, :, None] * (eye[order][:, None, :] - eye[None]) / tau


def conflict_metric(x, y, K, tau=1.0, kind="neuralsort"):
    """Share of competing positive pairs in the top-K rows of a soft permutation.

    For each rank row ``i < K`` count ordered pairs of distinct positives
    ``(j, m)`` where raising ``x_m`` lowers ``P[i, j]``
    (``dP_ij / dx_m < 0``), divided by the number of such pairs. The result
    is averaged over rows; 0 means no competition, 1 means every positive
    pair competes in every row.
    """
    x = as_scores(x)
    y = as_labels(y, x.shape)
    if x.ndim != 1:
        raise ValidationError("conflict_metric takes a single vector")
    check_k(K, x.size + 1)
    pos = np.flatnonzero(y)
    if pos.size < 2:
        raise ValidationError("conflict_metric needs at least two positive labels")
    P = soft_permutation(x, tau, kind, rows=K)
    Z = _logit_jacobian(x, tau, K, kind)
    dP = P[:, :, None] * (Z - np.einsum("il,ilm->im", P, Z)[:, None, :])
    sub = dP[:, pos][:, :, pos]
    off = ~np.eye(pos.size, dtype=bool)
    return float((sub[:, off] < 0).mean(axis=1).mean())


def dftopk_conflict_metric(x, y, cfg: TopKConfig):
    """The same pair count for the DFTopK soft mask, over off-boundary positives.

    The Jacobian is assembled from :func:`dftopk_vjp` row by row, so this
    measures what the backward pass actually propagates.
    """
    x = as_scores(x)
    y = as_labels(y, x.shape)
    if x.ndim != 1:
        raise ValidationError("dftopk_conflict_metric takes a single vector")
    pair = select_rank_pair(x, cfg.k)
    boundary = {pair.kth_index, pair.kplus1_index}
    pos = [j for j in np.flatnonzero(y) if j not in boundary]
    if len(pos) < 2:
        raise ValidationError("need at least two off-boundary positives")
    eye = np.eye(x.size)
    J = np.stack([dftopk_vjp(x, cfg, eye[j], pair) for j in pos])[:, pos]
    off = ~np.eye(len(pos), dtype=bool)
    return float((J[off] < 0).mean())
