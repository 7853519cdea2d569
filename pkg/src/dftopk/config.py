"""Flat YAML run configs with ``key=value`` overrides.

A config file is a single mapping whose keys are :class:`RunConfig` fields.
Unknown keys are rejected by name; values are coerced to the field's type
and then validated by building the training config.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import yaml

from dftopk.cascade import LOSS_KINDS, TrainConfig
from dftopk.core import ValidationError

DEFAULT_TAUS = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3, 1e4)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    loss_kinds: tuple[str, ...] = ("dftopk",)
    taus: tuple[float, ...] = DEFAULT_TAUS
    # the tau sweep runs a longer stream: small temperatures converge slowly
    sweep_days: int = 30
    sweep_pvs_per_day: int = 1536

    def for_kind(self, kind) -> TrainConfig:
        return TrainConfig(**{**asdict(self.train), "loss_kind": kind})


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
_RUN_FIELDS = {"loss_kinds", "taus", "sweep_days", "sweep_pvs_per_day"}


def _coerce(key, value, kind):
    if kind is bool or isinstance(value, bool):
        raise ValidationError(f"{key}: booleans are not accepted")
    try:
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{key}: cannot read {value!r} as {kind.__name__}") from None


def _as_list(key, value, kind):
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    if not isinstance(value, (list, tuple)) or not value:
        raise ValidationError(f"{key}: expected a non-empty list")
    return tuple(_coerce(key, yaml.safe_load(v) if isinstance(v, str) and kind is not str else v, kind)
                 for v in value)


def build(mapping: dict) -> RunConfig:
    train_kw, run_kw = {}, {}
    for key, value in mapping.items():
        if key in _TRAIN_FIELDS:
            kind = {"int": int, "float": float, "str": str, "float | None": float}[_TRAIN_FIELDS[key].type]
            train_kw[key] = _coerce(key, value, kind)
        elif key == "loss_kinds":
            run_kw[key] = tuple(s.strip() for s in _as_list(key, value, str))
        elif key == "taus":
            run_kw[key] = _as_list(key, value, float)
        elif key in _RUN_FIELDS:
            run_kw[key] = _coerce(key, value, int)
        else:
            raise ValidationError(f"unknown config key {key!r}")
    for kind in run_kw.get("loss_kinds", ()):
        if kind not in LOSS_KINDS:
            raise ValidationError(f"loss_kinds: unknown loss kind {kind!r}")
    if any(not t > 0 for t in run_kw.get("taus", ())):
        raise ValidationError("taus: every tau must be positive")
    for key in ("sweep_days", "sweep_pvs_per_day"):
        if run_kw.get(key, 2) < (2 if key == "sweep_days" else 1):
            raise ValidationError(f"{key}: value too small")
    if "loss_kinds" in run_kw and "loss_kind" not in train_kw:
        train_kw["loss_kind"] = run_kw["loss_kinds"][0]
    return RunConfig(train=TrainConfig(**train_kw), **run_kw)


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"override {item!r} is not key=value")
        out[key.strip()] = yaml.safe_load(raw) if raw.strip() else raw
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    mapping = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ValidationError(f"{path}: config must be a flat key-value mapping")
        for k, v in loaded.items():
            if isinstance(v, dict):
                raise ValidationError(f"{path}: nested value under {k!r}; config is flat")
        mapping.update(loaded)
    mapping.update(parse_overrides(overrides))
    return build(mapping)
