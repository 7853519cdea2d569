"""Recall@k@m for a single stage and for a two-stage cascade.

Recall counts how many ground-truth positives survive into the top-m list,
over the number of positives. Top-m lists use the same lower-index tie-break
as :func:`dftopk.core.hard_topk`, so results are deterministic under ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dftopk.core import ValidationError, as_labels, as_scores


@dataclass(frozen=True)
class RecallResult:
    hits: int
    possible: int

    def __post_init__(self):
        if self.possible < 1:
            raise ValidationError("recall needs at least one positive")
        if not 0 <= self.hits <= self.possible:
            raise ValidationError(f"hits={self.hits} outside [0, {self.possible}]")

    @property
    def recall(self) -> float:
        return self.hits / self.possible


def top_m_indices(x, m) -> np.ndarray:
    """Indices of the m largest scores, lower index first among equals.

    Returned in rank order. ``m`` may equal N here (unlike ``hard_topk``).
    """
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(-x, kind="stable")
    return order[:m]


def _positives(y, shape):
    y = as_labels(y, shape)
    n_pos = int(y.sum())
    if n_pos < 1:
        raise ValidationError("labels contain no positives")
    return y, n_pos


def _check_m(m, n, name="m"):
    if isinstance(m, (bool, np.bool_)) or int(m) != m or not 1 <= m <= n:
        raise ValidationError(f"{name}={m!r} outside [1, {n}]")


def recall_at_k_at_m(scores, y, m) -> RecallResult:
    x = as_scores(scores)
    if x.ndim != 1:
        raise ValidationError("recall_at_k_at_m takes a single score vector")
    _check_m(m, x.size)
    y, n_pos = _positives(y, x.shape)
    hits = int(y[top_m_indices(x, m)].sum())
    return RecallResult(hits, n_pos)


def joint_recall(retrieval, ranking, y, m_retrieval, m_ranking) -> RecallResult:
    """Retrieval keeps its top ``m_retrieval``; ranking keeps ``m_ranking`` of those."""
    r = as_scores(retrieval)
    s = as_scores(ranking)
    if r.ndim != 1 or r.shape != s.shape:
        raise ValidationError(f"stage scores must be equal-length vectors, got {r.shape} and {s.shape}")
    n = r.size
    _check_m(m_retrieval, n, "m_retrieval")
    _check_m(m_ranking, m_retrieval, "m_ranking")
    y, n_pos = _positives(y, r.shape)
    # survivors stay in index order so the stage-2 tie-break is still by item index
    survivors = np.sort(top_m_indices(r, m_retrieval))
    kept = survivors[top_m_indices(s[survivors], m_ranking)]
    return RecallResult(int(y[kept].sum()), n_pos)


def mean_recall(results) -> float:
    """Unweighted mean of per-PV recalls (each PV counts once)."""
    results = list(results)
    if not results:
        raise ValidationError("no results to average")
    return float(np.mean([r.recall for r in results]))
