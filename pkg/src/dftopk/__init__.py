"""Differentiable fast Top-K selection with baselines, checks and a toy cascade."""

from dftopk.core import (
    RangeError,
    RankPair,
    TopKConfig,
    ValidationError,
    dftopk_forward,
    dftopk_loss,
    dftopk_loss_backward,
    dftopk_vjp,
    hard_topk,
    select_rank_pair,
    strict_threshold,
    strict_topk_forward,
    strict_topk_vjp,
    sum_deviation,
)
from dftopk.metrics import RecallResult, joint_recall, recall_at_k_at_m

__all__ = [
    "RangeError", "RankPair", "RecallResult", "TopKConfig", "ValidationError",
    "dftopk_forward", "dftopk_loss", "dftopk_loss_backward", "dftopk_vjp", "hard_topk",
    "joint_recall", "recall_at_k_at_m", "select_rank_pair", "strict_threshold",
    "strict_topk_forward", "strict_topk_vjp", "sum_deviation",
]
