"""Synthetic page-view (PV) stream for the cascade simulator.

Latent-factor relevance::

    r(u, v) = <A_u u, R(day) A_i v> + noise

``A_u``, ``A_i`` project features to a small latent space and ``R(day)`` is
a rotation that advances by a fixed angle each day, so the scorer that was
right yesterday is slightly off today. Each PV draws one user and
``base_candidates`` items; the ``k_pos`` most relevant are the positives.
``n_neg`` padding negatives are then added, each resampled until it scores
below the weakest positive, so a noiseless PV is always perfectly ranked by
the true relevance. Items are shuffled within a PV so position carries no
label information.

PV ``j`` belongs to day ``j % days`` (round-robin); every PV has its own
seeded generator, so the stream can be produced in any order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from dftopk.core import ValidationError


@dataclass(frozen=True)
class PVRecord:
    user_features: np.ndarray  # (D_u,)
    item_features: np.ndarray  # (N, D_i)
    labels: np.ndarray  # (N,) 0/1
    day: int

    @property
    def n_items(self):
        return self.item_features.shape[0]


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    days: int = 15
    pvs_per_day: int = 1536
    base_candidates: int = 40
    n_neg: int = 160
    k_pos: int = 10
    d_user: int = 16
    d_item: int = 16
    latent: int = 4
    noise: float = 0.25
    drift: float = 0.05  # radians per day

    def __post_init__(self):
        if self.days < 1 or self.pvs_per_day < 1:
            raise ValidationError("days and pvs_per_day must be positive")
        if not 1 <= self.k_pos < self.base_candidates:
            raise ValidationError(f"k_pos={self.k_pos} must lie in [1, base_candidates)")
        if self.n_neg < 0 or self.noise < 0:
            raise ValidationError("n_neg and noise must be non-negative")
        if self.latent < 2:
            raise ValidationError("latent dimension must be at least 2")

    @property
    def n_items(self):
        return self.base_candidates + self.n_neg


@dataclass(frozen=True)
class LatentModel:
    proj_user: np.ndarray  # (L, D_u)
    proj_item: np.ndarray  # (L, D_i)
    drift: float

    def rotation(self, day):
        """Rotate each consecutive latent plane by ``drift * day``."""
        L = self.proj_user.shape[0]
        R = np.eye(L)
        c, s = np.cos(self.drift * day), np.sin(self.drift * day)
        for p in range(0, L - 1, 2):
            R[p:p + 2, p:p + 2] = [[c, -s], [s, c]]
        return R

    def item_map(self, day):
        return self.rotation(day) @ self.proj_item

    def relevance(self, u, V, day):
        """Noise-free relevance of items ``V`` (rows) for user ``u`` on ``day``."""
        return (V @ self.item_map(day).T) @ (self.proj_user @ u)


def latent_model(cfg: DataConfig) -> LatentModel:
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    pu = rng.standard_normal((cfg.latent, cfg.d_user)) / np.sqrt(cfg.d_user)
    pi = rng.standard_normal((cfg.latent, cfg.d_item)) / np.sqrt(cfg.d_item)
    return LatentModel(pu, pi, cfg.drift)


def make_pv(cfg: DataConfig, truth: LatentModel, index: int) -> PVRecord:
    day = index % cfg.days
    rng = np.random.default_rng([cfg.seed, 1, index])
    u = rng.standard_normal(cfg.d_user)
    V = rng.standard_normal((cfg.base_candidates, cfg.d_item))
    r = truth.relevance(u, V, day) + cfg.noise * rng.standard_normal(cfg.base_candidates)
    cut = np.sort(r)[::-1][cfg.k_pos - 1]
    labels = (r >= cut).astype(np.int64)
    if labels.sum() != cfg.k_pos:  # exact tie at the cut; measure-zero but keep the contract
        labels = np.zeros_like(labels)
        labels[np.argsort(-r, kind="stable")[:cfg.k_pos]] = 1

    neg = np.empty((cfg.n_neg, cfg.d_item))
    filled = 0
    while filled < cfg.n_neg:
        cand = rng.standard_normal((cfg.n_neg, cfg.d_item))
        rc = truth.relevance(u, cand, day) + cfg.noise * rng.standard_normal(cfg.n_neg)
        keep = cand[rc < cut][: cfg.n_neg - filled]
        neg[filled:filled + len(keep)] = keep
        filled += len(keep)

    items = np.vstack([V, neg])
    y = np.concatenate([labels, np.zeros(cfg.n_neg, dtype=np.int64)])
    perm = rng.permutation(cfg.n_items)
    return PVRecord(u, items[perm], y[perm], day)


def day_indices(cfg: DataConfig, day: int) -> range:
    return range(day, cfg.days * cfg.pvs_per_day, cfg.days)


def generate_day(cfg: DataConfig, day: int, truth: LatentModel | None = None) -> list[PVRecord]:
    truth = latent_model(cfg) if truth is None else truth
    return [make_pv(cfg, truth, j) for j in day_indices(cfg, day)]


def generate_dataset(cfg: DataConfig) -> Iterator[PVRecord]:
    """All PVs, day by day."""
    truth = latent_model(cfg)
    for day in range(cfg.days):
        yield from generate_day(cfg, day, truth)


def stack(pvs):
    """Batch PVs into arrays ``(U, V, Y)`` of shapes (B, D_u), (B, N, D_i), (B, N)."""
    U = np.stack([p.user_features for p in pvs])
    V = np.stack([p.item_features for p in pvs])
    Y = np.stack([p.labels for p in pvs]).astype(np.float64)
    return U, V, Y


# -- line-delimited JSON export ------------------------------------------------
# floats go through repr, which round-trips float64 exactly


def pv_to_json(pv: PVRecord) -> str:
    return json.dumps(
        {
            "day": int(pv.day),
            "user_features": pv.user_features.tolist(),
            "item_feature_rows": pv.item_features.tolist(),
            "labels": [int(v) for v in pv.labels],
        },
        separators=(",", ":"),
    )


def pv_from_json(line: str) -> PVRecord:
    d = json.loads(line)
    missing = {"day", "user_features", "item_feature_rows", "labels"} - d.keys()
    if missing:
        raise ValidationError(f"PV record missing fields: {sorted(missing)}")
    items = np.asarray(d["item_feature_rows"], dtype=np.float64)
    labels = np.asarray(d["labels"], dtype=np.int64)
    if items.ndim != 2 or labels.shape != (items.shape[0],):
        raise ValidationError("item rows and labels disagree in length")
    return PVRecord(np.asarray(d["user_features"], dtype=np.float64), items, labels, int(d["day"]))


def write_pvs(path, pvs):
    with open(path, "w", encoding="utf-8") as fh:
        for pv in pvs:
            fh.write(pv_to_json(pv) + "\n")


def read_pvs(path) -> list[PVRecord]:
    with open(path, encoding="utf-8") as fh:
        return [pv_from_json(line) for line in fh if line.strip()]
