import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from dftopk.core import (
    RangeError,
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

X4 = np.array([4.0, 1.0, 3.0, 2.0])
Y4 = np.array([1.0, 0.0, 1.0, 0.0])


# -- worked examples ----------------------------------------------------------------


def test_hard_top2():
    assert hard_topk(X4, 2).tolist() == [1, 0, 1, 0]


def test_threshold_and_forward():
    probs, pair = dftopk_forward(X4, TopKConfig(2, 1.0), return_pair=True)
    assert pair.threshold == 2.5
    assert (pair.kth_index, pair.kplus1_index) == (2, 3)
    np.testing.assert_allclose(probs, expit(np.array([1.5, -1.5, 0.5, -0.5])), rtol=0, atol=1e-15)
    np.testing.assert_allclose(probs, [0.8175744761936437, 0.18242552380635635,
                                       0.6224593312018546, 0.3775406687981454], atol=1e-15)


def test_loss_value():
    # (2 softplus(-1.5) + 2 softplus(-0.5)) / 4
    assert dftopk_loss(X4, Y4, TopKConfig(2)) == pytest.approx(0.33774513108142956, rel=1e-14)


def test_loss_two_items():
    # both items sit 5 from the threshold on the correct side: softplus(-5)
    assert dftopk_loss([10.0, 0.0], [1, 0], TopKConfig(1)) == pytest.approx(0.006715348489118068, rel=1e-14)


def test_backward_value():
    g = dftopk_loss_backward(X4, Y4, TopKConfig(2))
    np.testing.assert_allclose(g, [-0.0456064, 0.0456064, -0.0943852, 0.0943852], atol=5e-8)


def test_strict_threshold_symmetric():
    assert strict_threshold(X4, TopKConfig(2)) == pytest.approx(2.5, abs=1e-9)


def test_sum_deviation_example():
    m = dftopk_forward([10.0, 3.0, 2.9, 0.0], TopKConfig(2))
    assert sum_deviation(m, 2) == pytest.approx(0.04886985434747748, rel=1e-12)


def test_selection_routes_agree():
    x = [3.0, 1.0, 3.0, 2.0, 3.0]
    a = select_rank_pair(x, 2)
    b = select_rank_pair(x, 2, method="introselect")
    assert a == b
    assert (a.kth_index, a.kplus1_index) == (2, 4)


# -- validation ---------------------------------------------------------------------


@pytest.mark.parametrize("k", [0, 4, 2.5, True])
def test_bad_k(k):
    with pytest.raises(RangeError):
        hard_topk(X4, k)


@pytest.mark.parametrize("x", [[1.0], [np.nan, 1.0], [np.inf, 0.0], np.zeros((2, 2, 2))])
def test_bad_scores(x):
    with pytest.raises(ValidationError):
        dftopk_forward(x, TopKConfig(1))


@pytest.mark.parametrize("tau", [0.0, -1.0, np.inf, np.nan])
def test_bad_tau(tau):
    with pytest.raises(ValidationError):
        TopKConfig(1, tau)


def test_bad_labels():
    with pytest.raises(ValidationError):
        dftopk_loss(X4, [1, 0, 2, 0], TopKConfig(2))
    with pytest.raises(ValidationError):
        dftopk_loss(X4, [1, 0, 1], TopKConfig(2))


# -- properties ---------------------------------------------------------------------

finite = st.floats(-1e3, 1e3, allow_nan=False)
taus = st.sampled_from([1e-3, 0.1, 1.0, 10.0, 500.0])


@st.composite
def instances(draw, min_size=2, max_size=40):
    x = draw(st.lists(finite | st.integers(-3, 3).map(float), min_size=min_size, max_size=max_size))
    k = draw(st.integers(1, len(x) - 1))
    y = draw(st.lists(st.integers(0, 1), min_size=len(x), max_size=len(x)))
    return np.array(x), np.array(y, dtype=float), k


@given(instances(), taus)
def test_forward_in_unit_interval_and_monotone(inst, tau):
    x, _, k = inst
    p = dftopk_forward(x, TopKConfig(k, tau))
    assert np.all((p >= 0) & (p <= 1))
    order = np.argsort(x)
    assert np.all(np.diff(p[order]) >= 0)


@given(instances(), taus)
def test_boundary_pair_sums_to_one(inst, tau):
    x, _, k = inst
    p, pair = dftopk_forward(x, TopKConfig(k, tau), return_pair=True)
    assert abs(p[pair.kth_index] + p[pair.kplus1_index] - 1.0) <= 4 * np.finfo(float).eps


@given(instances(), taus, st.integers(-2**20, 2**20))
def test_translation_invariance(inst, tau, shift):
    x, _, k = inst
    x = np.round(x * 2**10) / 2**10  # dyadic grid: x + shift is exact
    cfg = TopKConfig(k, tau)
    np.testing.assert_allclose(dftopk_forward(x + shift, cfg), dftopk_forward(x, cfg), atol=1e-9, rtol=0)


@given(instances(), taus)
def test_gradients_sum_to_zero(inst, tau):
    x, y, k = inst
    cfg = TopKConfig(k, tau)
    g = dftopk_loss_backward(x, y, cfg)
    assert abs(g.sum()) <= 1e-12 * x.size * max(1.0, np.abs(g).max())
    v = dftopk_vjp(x, cfg, y - 0.5)
    assert abs(v.sum()) <= 1e-12 * x.size * max(1.0, np.abs(v).max())


@given(instances(max_size=20))
def test_approximation_bound(inst):
    x, _, k = inst
    xs = np.unique(x)
    if xs.size < x.size:
        return  # bound needs a strict gap
    gap = np.diff(np.sort(x)).min()
    tau = gap / 100
    err = np.abs(dftopk_forward(x, TopKConfig(k, tau)) - hard_topk(x, k)).max()
    assert err <= expit(-gap / (2 * tau)) * (1 + 1e-9)


@given(instances(), taus)
def test_batch_matches_rows(inst, tau):
    x, y, k = inst
    X = np.stack([x, x[::-1], np.roll(x, 1)])
    Y = np.stack([y, y[::-1], np.roll(y, 1)])
    cfg = TopKConfig(k, tau)
    losses = dftopk_loss(X, Y, cfg)
    grads = dftopk_loss_backward(X, Y, cfg)
    for i in range(3):
        assert losses[i] == pytest.approx(dftopk_loss(X[i], Y[i], cfg), rel=1e-14)
        np.testing.assert_allclose(grads[i], dftopk_loss_backward(X[i], Y[i], cfg), rtol=1e-13, atol=0)


@given(instances(min_size=3), st.sampled_from([0.1, 1.0, 10.0]))
def test_strict_operator_sums_to_k(inst, tau):
    x, _, k = inst
    cfg = TopKConfig(k, tau)
    p = strict_topk_forward(x, cfg)
    assert abs(p.sum() - k) <= 1e-9
    assert abs(strict_topk_vjp(x, cfg, np.ones_like(x)).sum()) <= 1e-9


def test_strict_vjp_matches_finite_difference(rng):
    x = rng.normal(size=9)
    u = rng.normal(size=9)
    cfg = TopKConfig(4, 0.7)
    g = strict_topk_vjp(x, cfg, u, eps=1e-14)
    h = 1e-6
    fd = [(u @ strict_topk_forward(x + h * e, cfg, 1e-14) - u @ strict_topk_forward(x - h * e, cfg, 1e-14)) / (2 * h)
          for e in np.eye(9)]
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_mean_sum_deviation_shrinks_with_tau():
    x = np.random.default_rng(0).standard_normal((500, 200))
    taus = (1e4, 1e3, 100.0, 10.0, 1.0, 0.1, 0.01, 1e-3, 1e-4)
    dev = [np.mean(sum_deviation(dftopk_forward(x, TopKConfig(10, t)), 10)) for t in taus]
    assert np.all(np.diff(dev) <= 0)
    assert dev[-1] < 1e-4
