import pytest

from dftopk.config import DEFAULT_TAUS, load_config, parse_overrides
from dftopk.core import ValidationError


def test_defaults():
    cfg = load_config()
    assert cfg.train.loss_kind == "dftopk"
    assert cfg.taus == DEFAULT_TAUS
    assert cfg.train.base_candidates + cfg.train.n_neg == 200


def test_file_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("tau: 0.5\ndays: 4\nloss_kinds: [dftopk, pointwise_bce]\n")
    cfg = load_config(path, ["days=3", "learning_rate=1e-3"])
    assert cfg.train.tau == 0.5
    assert cfg.train.days == 3
    assert cfg.train.learning_rate == 1e-3
    assert cfg.loss_kinds == ("dftopk", "pointwise_bce")


def test_comma_lists():
    cfg = load_config(None, ["taus=0.1,1,10", "loss_kinds=softsort,neuralsort"])
    assert cfg.taus == (0.1, 1.0, 10.0)
    assert cfg.loss_kinds == ("softsort", "neuralsort")
    assert cfg.train.loss_kind == "softsort"


@pytest.mark.parametrize("override, key", [
    ("bogus=1", "bogus"),
    ("days=two", "days"),
    ("days=2.5", "days"),
    ("loss_kind=hinge", "loss_kind"),
    ("taus=1,-1", "taus"),
    ("loss_kinds=dftopk,foo", "loss_kinds"),
    ("k_ranking=50", "k_ranking"),
])
def test_rejects_with_key_name(override, key):
    with pytest.raises(ValidationError, match=key):
        load_config(None, [override])


def test_nested_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("train:\n  tau: 1\n")
    with pytest.raises(ValidationError):
        load_config(path)


def test_override_syntax():
    assert parse_overrides(["a=1", "b = x"]) == {"a": 1, "b": "x"}
    with pytest.raises(ValidationError):
        parse_overrides(["novalue"])
