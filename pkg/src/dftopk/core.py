"""Hard and relaxed Top-K operators.

The relaxed operator places a threshold halfway between the k-th and
(k+1)-th largest scores and squashes the shifted scores with a sigmoid::

    theta(x) = (x_[k] + x_[k+1]) / 2
    f_k(x)   = sigmoid((x - theta(x)) / tau)

Finding the two order statistics is a selection problem, so forward and
backward passes are O(N) on average. All functions accept a single score
vector or a 2-D batch of vectors (one per row); batched calls reduce along
the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from dftopk.selection import introselect_pair, partition_rank_pair


class ValidationError(ValueError):
    """Input failed a precondition (non-finite scores, shape mismatch, ...)."""


class RangeError(ValidationError):
    """``k`` outside ``[1, N-1]``."""


@dataclass(frozen=True)
class TopKConfig:
    k: int
    tau: float = 1.0

    def __post_init__(self):
        if not float(self.tau) > 0 or not np.isfinite(self.tau):
            raise ValidationError(f"tau must be positive and finite, got {self.tau}")

    def check(self, n: int) -> None:
        check_k(self.k, n)


@dataclass(frozen=True)
class RankPair:
    """The two scores straddling the Top-K decision boundary.

    For batched input each field is an array with one entry per row.
    """

    kth_value: float | np.ndarray
    kplus1_value: float | np.ndarray
    kth_index: int | np.ndarray
    kplus1_index: int | np.ndarray

    @property
    def threshold(self):
        return 0.5 * (self.kth_value + self.kplus1_value)


def check_k(k, n):
    if isinstance(k, (bool, np.bool_)) or int(k) != k:
        raise RangeError(f"k must be an integer, got {k!r}")
    if not 1 <= k <= n - 1:
        raise RangeError(f"k={k} outside [1, {n - 1}] for N={n}")


def as_scores(x) -> np.ndarray:
    """Validate and convert to a float64 array of shape (N,) or (B, N)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise ValidationError(f"scores must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[-1] < 2:
        raise ValidationError(f"need at least 2 items, got {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("scores contain NaN or infinite entries")
    return arr


def as_labels(y, shape) -> np.ndarray:
    lab = np.asarray(y, dtype=np.float64)
    if lab.shape != shape:
        raise ValidationError(f"labels shape {lab.shape} does not match scores {shape}")
    if not np.all((lab == 0) | (lab == 1)):
        raise ValidationError("labels must be binary")
    return lab


def select_rank_pair(x, k, method="partition") -> RankPair:
    """k-th and (k+1)-th largest scores with their indices.

    Ties are broken by the lower index taking the higher rank. ``method`` is
    ``"partition"`` (numpy, vectorized) or ``"introselect"`` (pure Python,
    1-D only); both are linear on average and never sort.
    """
    x = as_scores(x)
    check_k(k, x.shape[-1])
    if method == "introselect":
        if x.ndim != 1:
            raise ValidationError("introselect path takes a single vector")
        i_k, i_n = introselect_pair(x.tolist(), k)
        return RankPair(float(x[i_k]), float(x[i_n]), int(i_k), int(i_n))
    if method != "partition":
        raise ValueError(f"unknown selection method {method!r}")
    kth, nxt, i_k, i_n = partition_rank_pair(x, k)
    if x.ndim == 1:
        return RankPair(float(kth), float(nxt), int(i_k), int(i_n))
    return RankPair(kth, nxt, i_k, i_n)


def hard_topk(x, k) -> np.ndarray:
    """0/1 mask with ones on the k largest scores (same tie-break as selection)."""
    x = as_scores(x)
    pair = select_rank_pair(x, k)
    kth = np.asarray(pair.kth_value)[..., None]
    cut = np.asarray(pair.kth_index)[..., None]
    idx = np.arange(x.shape[-1])
    mask = (x > kth) | ((x == kth) & (idx <= cut))
    return mask.astype(np.int64)


def _shifted(x, pair, tau):
    # (x - a) + (x - b) instead of x - (a + b)/2: the two boundary entries
    # come out as exact negatives, so their sigmoids sum to 1 to rounding
    a = np.asarray(pair.kth_value)
    b = np.asarray(pair.kplus1_value)
    if x.ndim == 2:
        a, b = a[:, None], b[:, None]
    return ((x - a) + (x - b)) / (2.0 * tau)


def dftopk_forward(x, cfg: TopKConfig, return_pair=False):
    """Soft Top-K mask ``sigmoid((x - theta(x)) / tau)``."""
    x = as_scores(x)
    cfg.check(x.shape[-1])
    pair = select_rank_pair(x, cfg.k)
    probs = expit(_shifted(x, pair, cfg.tau))
    return (probs, pair) if return_pair else probs


def _bce_terms(z, y):
    # -log sigmoid(z) for positives, -log(1 - sigmoid(z)) = -log sigmoid(-z) otherwise
    return -(y * log_expit(z) + (1.0 - y) * log_expit(-z))


def dftopk_loss(x, y, cfg: TopKConfig):
    """Mean binary cross-entropy between the soft mask and binary labels.

    Returns a float for a single vector, one loss per row for a batch.
    """
    x = as_scores(x)
    y = as_labels(y, x.shape)
    cfg.check(x.shape[-1])
    z = _shifted(x, select_rank_pair(x, cfg.k), cfg.tau)
    out = _bce_terms(z, y).mean(axis=-1)
    return float(out) if x.ndim == 1 else out


def _scatter_boundary(g, pair, total):
    """Subtract ``total / 2`` at both boundary indices of every row (in place)."""
    if g.ndim == 1:
        g[pair.kth_index] -= 0.5 * total
        g[pair.kplus1_index] -= 0.5 * total
    else:
        rows = np.arange(g.shape[0])
        g[rows, pair.kth_index] -= 0.5 * total
        g[rows, pair.kplus1_index] -= 0.5 * total
    return g


def dftopk_loss_backward(x, y, cfg: TopKConfig, pair: RankPair | None = None):
    """Gradient of :func:`dftopk_loss` with respect to the scores.

    With ``s_i = (sigmoid(x'_i / tau) - y_i) / (N tau)`` the gradient is
    ``s`` everywhere except the two boundary items, which also carry
    ``-sum(s) / 2`` through the threshold. Boundary indices are held fixed
    (they are piecewise constant in ``x``).
    """
    x = as_scores(x)
    y = as_labels(y, x.shape)
    cfg.check(x.shape[-1])
    if pair is None:
        pair = select_rank_pair(x, cfg.k)
    n = x.shape[-1]
    z = _shifted(x, pair, cfg.tau)
    # sigmoid(z) - 1 == -sigmoid(-z), without the cancellation
    s = np.where(y > 0, -expit(-z), expit(z)) / (n * cfg.tau)
    return _scatter_boundary(s, pair, s.sum(axis=-1))


def dftopk_vjp(x, cfg: TopKConfig, upstream, pair: RankPair | None = None):
    """Vector-Jacobian product of :func:`dftopk_forward`."""
    x = as_scores(x)
    cfg.check(x.shape[-1])
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape:
        raise ValidationError(f"upstream shape {upstream.shape} != scores {x.shape}")
    if pair is None:
        pair = select_rank_pair(x, cfg.k)
    z = _shifted(x, pair, cfg.tau)
    # sigmoid'(z) written as a product of two expits keeps precision in the tails
    t = upstream * expit(z) * expit(-z) / cfg.tau
    return _scatter_boundary(t, pair, t.sum(axis=-1))


def strict_threshold(x, cfg: TopKConfig, eps=1e-10, max_iter=400) -> float:
    """Solve ``sum_i sigmoid((x_i - theta) / tau) = k`` for theta by bisection.

    The residual is strictly decreasing in theta; the bracket
    ``[min(x) - 40 tau, max(x) + 40 tau]`` always contains the root because
    ``1 <= k <= N - 1``. Iteration stops once ``|residual| <= eps`` or the
    bracket can no longer be split in floating point.
    """
    x = as_scores(x)
    if x.ndim != 1:
        raise ValidationError("strict_threshold takes a single vector")
    cfg.check(x.size)
    if not eps > 0:
        raise ValidationError("eps must be positive")
    tau, k = cfg.tau, cfg.k

    def residual(theta):
        return expit((x - theta) / tau).sum() - k

    lo = x.min() - 40.0 * tau
    hi = x.max() + 40.0 * tau
    best, best_r = lo, residual(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r = residual(mid)
        if abs(r) < abs(best_r):
            best, best_r = mid, r
        if abs(r) <= eps or mid in (lo, hi):
            break
        if r > 0:
            lo = mid
        else:
            hi = mid
    return float(best)


def strict_topk_forward(x, cfg: TopKConfig, eps=1e-10):
    """Sum-to-k soft mask using the bisection threshold (reference operator)."""
    x = as_scores(x)
    theta = strict_threshold(x, cfg, eps)
    return expit((x - theta) / cfg.tau)


def strict_topk_vjp(x, cfg: TopKConfig, upstream, eps=1e-10):
    """VJP of :func:`strict_topk_forward` via implicit differentiation of the threshold.

    ``d theta / d x_j = d_j / sum(d)`` with ``d = sigmoid'``, since the
    constraint sum stays equal to k.
    """
    x = as_scores(x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape:
        raise ValidationError(f"upstream shape {upstream.shape} != scores {x.shape}")
    theta = strict_threshold(x, cfg, eps)
    z = (x - theta) / cfg.tau
    # d / sum(d) from log d, so the ratio survives when every d underflows
    log_d = log_expit(z) + log_expit(-z)
    w = np.exp(log_d - log_d.max())
    d = np.exp(log_d)
    return d * (upstream - (upstream @ w) / w.sum()) / cfg.tau


def bce_loss(probs, y):
    """Mean BCE on probabilities (clipped logs); used by the strict reference path."""
    p = np.clip(probs, 1e-300, 1.0)
    q = np.clip(1.0 - probs, 1e-300, 1.0)
    return float(-(y * np.log(p) + (1 - y) * np.log(q)).mean())


def bce_grad(probs, y):
    """d(mean BCE)/d(probs)."""
    p = np.clip(probs, 1e-300, 1.0 - 1e-16)
    return (p - y) / (p * (1.0 - p)) / probs.shape[-1]


def sum_deviation(mask, k) -> float | np.ndarray:
    """``|sum(mask) - k|``; how far a soft mask is from selecting exactly k items."""
    m = np.asarray(mask, dtype=np.float64)
    out = np.abs(m.sum(axis=-1) - k)
    return float(out) if m.ndim == 1 else out
