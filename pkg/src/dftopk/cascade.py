"""Two-stage cascade training with per-stage Top-K losses and streaming evaluation.

Each stage gets its own loss on its own scores; the total is their sum:

    L = L_topk(retrieval, y, k_retrieval) + L_topk(ranking, y, k_ranking)

``loss_kind`` picks the stage loss: the DFTopK BCE loss, negative expected
TopK under NeuralSort or SoftSort, or a pointwise sigmoid BCE on raw scores.
Streaming evaluation tests on day t after training (one pass) on day t-1,
continuing from the model that already saw days < t-1.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import expit, log_expit

from dftopk import baselines
from dftopk.core import TopKConfig, ValidationError, dftopk_forward, dftopk_loss, dftopk_loss_backward
from dftopk.data import DataConfig, generate_day, latent_model, stack
from dftopk.metrics import joint_recall, recall_at_k_at_m
from dftopk.model import Adam, CascadeModel, ModelDims, backward, forward

log = logging.getLogger(__name__)

LOSS_KINDS = ("dftopk", "neuralsort", "softsort", "pointwise_bce")
# The permutation losses reward ever sharper soft permutations, so a free
# output gain runs away on them; they train with the gain frozen.
DEFAULT_GAIN_RATE = {"dftopk": 30.0, "pointwise_bce": 30.0, "neuralsort": 0.0, "softsort": 0.0}
CSV_HEADER = ("day", "loss_kind", "joint_recall", "retrieval_recall", "ranking_recall", "sum_deviation")


class TrainingDiverged(RuntimeError):
    def __init__(self, step, detail):
        super().__init__(f"non-finite loss at step {step}: {detail}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "dftopk"
    k_retrieval: int = 10
    k_ranking: int = 10
    m_retrieval: int = 30
    m_ranking: int = 20
    tau: float = 1.0
    learning_rate: float = 0.01
    batch_pvs: int = 64
    seed: int = 0
    days: int = 15
    pvs_per_day: int = 1536
    base_candidates: int = 40
    n_neg: int = 160
    k_pos: int = 10
    d_user: int = 16
    d_item: int = 16
    hidden: int = 32
    embed: int = 8
    gain_rate: float | None = None  # None: DEFAULT_GAIN_RATE[loss_kind]
    latent: int = 4
    noise: float = 0.25
    drift: float = 0.05

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValidationError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        n = self.base_candidates + self.n_neg
        if not 1 <= self.k_ranking <= self.k_retrieval <= n - 1:
            raise ValidationError(
                f"need 1 <= k_ranking <= k_retrieval <= N-1, got {self.k_ranking}, {self.k_retrieval}, N={n}"
            )
        if not 1 <= self.m_ranking <= self.m_retrieval <= n:
            raise ValidationError(f"need 1 <= m_ranking <= m_retrieval <= N, got {self.m_ranking}, {self.m_retrieval}")
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ValidationError(f"tau must be positive, got {self.tau}")
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be non-negative")
        if self.gain_rate is not None and not self.gain_rate >= 0:
            raise ValidationError("gain_rate must be non-negative")
        if self.batch_pvs < 1:
            raise ValidationError("batch_pvs must be positive")
        self.data  # validates the data fields

    @property
    def data(self) -> DataConfig:
        keys = {f.name for f in fields(DataConfig)}
        return DataConfig(**{k: v for k, v in asdict(self).items() if k in keys})

    @property
    def dims(self) -> ModelDims:
        rate = DEFAULT_GAIN_RATE[self.loss_kind] if self.gain_rate is None else self.gain_rate
        return ModelDims(self.d_user, self.d_item, self.hidden, self.embed, float(rate))


# -- per-stage losses -------------------------------------------------------------


def stage_loss(kind, x, Y, k, tau):
    """Per-PV loss values (B,) and d loss / d x (B, N) for one stage."""
    if kind == "dftopk":
        cfg = TopKConfig(k, tau)
        return dftopk_loss(x, Y, cfg), dftopk_loss_backward(x, Y, cfg)
    if kind in baselines.KINDS:
        return (
            baselines.permutation_loss(x, Y, k, tau, kind),
            baselines.permutation_loss_backward(x, Y, k, tau, kind),
        )
    if kind == "pointwise_bce":
        loss = -(Y * log_expit(x) + (1 - Y) * log_expit(-x)).mean(axis=-1)
        grad = (expit(x) - Y) / x.shape[-1]
        return loss, grad
    raise ValidationError(f"unknown loss kind {kind!r}")


def soft_mask(kind, x, k, tau):
    """The relaxed selection each loss kind trains; used for the sum-deviation column."""
    if kind == "dftopk":
        return dftopk_forward(x, TopKConfig(k, tau))
    if kind in baselines.KINDS:
        return baselines.soft_permutation(x, tau, kind, rows=k).sum(axis=-2)
    return expit(x)


def total_loss(model, U, V, Y, cfg: TrainConfig, with_grad=True, step=None):
    """Mean over PVs of the summed stage losses, and its parameter gradient."""
    retrieval, ranking, cache = forward(model, U, V, keep_cache=True)
    if not (np.all(np.isfinite(retrieval)) and np.all(np.isfinite(ranking))):
        raise TrainingDiverged(step, "model produced non-finite scores")
    l1, g1 = stage_loss(cfg.loss_kind, retrieval, Y, cfg.k_retrieval, cfg.tau)
    l2, g2 = stage_loss(cfg.loss_kind, ranking, Y, cfg.k_ranking, cfg.tau)
    B = U.shape[0]
    loss = float(np.mean(l1 + l2))
    if not with_grad:
        return loss, None
    return loss, backward(model, cache, g1 / B, g2 / B)


def train_step(model: CascadeModel, opt: Adam, batch, cfg: TrainConfig, step=0):
    """One Adam update in place on ``model``; returns the batch loss."""
    U, V, Y = stack(batch) if not isinstance(batch, tuple) else batch
    loss, grads = total_loss(model, U, V, Y, cfg, step=step)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingDiverged(step, f"loss={loss}, batch of {U.shape[0]} PVs")
    opt.step(model.params, grads)
    if not model.all_finite():
        raise TrainingDiverged(step, "parameters became non-finite after the update")
    return loss


# -- evaluation ---------------------------------------------------------------------


@dataclass(frozen=True)
class DayMetrics:
    day: int
    loss_kind: str
    joint_recall: float
    retrieval_recall: float
    ranking_recall: float
    sum_deviation: float

    def row(self):
        return (self.day, self.loss_kind, f"{self.joint_recall:.6f}", f"{self.retrieval_recall:.6f}",
                f"{self.ranking_recall:.6f}", f"{self.sum_deviation:.6f}")


def evaluate(model, pvs, cfg: TrainConfig, day=-1) -> DayMetrics:
    """Mean per-PV recalls (joint, each stage alone) and soft-mask sum deviation."""
    U, V, Y = stack(pvs)
    retrieval, ranking = forward(model, U, V)
    joint, r1, r2 = [], [], []
    for i in range(len(pvs)):
        joint.append(joint_recall(retrieval[i], ranking[i], Y[i], cfg.m_retrieval, cfg.m_ranking).recall)
        r1.append(recall_at_k_at_m(retrieval[i], Y[i], cfg.m_retrieval).recall)
        r2.append(recall_at_k_at_m(ranking[i], Y[i], cfg.m_ranking).recall)
    dev = [
        np.abs(soft_mask(cfg.loss_kind, s, k, cfg.tau).sum(axis=-1) - k).mean()
        for s, k in ((retrieval, cfg.k_retrieval), (ranking, cfg.k_ranking))
    ]
    return DayMetrics(day, cfg.loss_kind, float(np.mean(joint)), float(np.mean(r1)),
                      float(np.mean(r2)), float(np.mean(dev)))


def train_day(model, opt, pvs, cfg: TrainConfig, step0=0, losses=None):
    """One pass over a day's PVs in fixed-size batches (order as generated)."""
    step = step0
    for start in range(0, len(pvs), cfg.batch_pvs):
        loss = train_step(model, opt, pvs[start:start + cfg.batch_pvs], cfg, step)
        if losses is not None:
            losses.append(loss)
        step += 1
    return step


def streaming_evaluate(cfg: TrainConfig, model: CascadeModel | None = None, losses=None):
    """Per-day metrics for days 1..days-1; returns ``(rows, final model)``.

    Day t is scored by the model that has trained once on days 0..t-1.
    """
    if cfg.days < 2:
        raise ValidationError("streaming evaluation needs days >= 2")
    data = cfg.data
    truth = latent_model(data)
    model = CascadeModel.init(cfg.dims, cfg.seed) if model is None else model
    opt = Adam(cfg.learning_rate)
    rows, step = [], 0
    train_pvs = generate_day(data, 0, truth)
    for day in range(1, cfg.days):
        step = train_day(model, opt, train_pvs, cfg, step, losses)
        test_pvs = generate_day(data, day, truth)
        rows.append(evaluate(model, test_pvs, cfg, day))
        log.info("%s day %d: joint=%.4f", cfg.loss_kind, day, rows[-1].joint_recall)
        train_pvs = test_pvs
    return rows, model


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.row())
    return buf.getvalue()


def oracle_scores(cfg: TrainConfig, pv):
    """Noise-free true relevance of a PV's items (the best achievable scorer)."""
    truth = latent_model(cfg.data)
    return truth.relevance(pv.user_features, pv.item_features, pv.day)
