"""Finite-difference oracle and seeded property suite.

The analytic gradients are checked against central differences of the
loss. Two things make a plain double-precision check meaningless at small
temperatures, so the oracles here differ from a textbook gradcheck:

* the step is ``1e-5 * min(1, tau)``: central-difference truncation error
  is about ``step**2 / (6 tau**2)`` relative, i.e. 1.7e-5 for a fixed 1e-5
  step at tau = 1e-3;
* losses are re-evaluated in 140-bit arithmetic (gmpy2/MPFR), because the
  double-precision noise floor ``ulp(L) / (2 step)`` is far above the 1e-8
  floor of the relative error.

The oracle losses are written from their definitions (full sort for the
threshold, log1p/exp for the BCE terms) and share no code with the
functions they check.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
import numpy as np
from scipy.special import expit

from dftopk import baselines, core
from dftopk.core import TopKConfig

SIZES = (2, 3, 5, 17, 64, 257)
TAUS = (1e-3, 1e-1, 1.0, 10.0, 500.0)
STEP = 1e-5
GRAD_RTOL = 1e-5
PERM_GRAD_RTOL = 1e-4
PERM_GRAD_MAX_N = 17
TRANSLATION_ATOL = 1e-9
COMPLEMENT_ATOL = 16 * np.finfo(np.float64).eps
ROW_SUM_ATOL = 1e-6
HARD_LIMIT_ATOL = 1e-6
STRICT_EPS = 1e-10
PRECISION_BITS = 140


class GapError(ValueError):
    """Perturbation would cross a rank-ordering boundary."""


@dataclass
class GradCheckReport:
    op_name: str
    instances: int = 0
    max_rel_error: float = 0.0
    max_abs_error: float = 0.0
    failures: int = 0
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def record(self, rel=0.0, abs_err=0.0, failed=0):
        self.instances += 1
        self.max_rel_error = max(self.max_rel_error, float(rel))
        self.max_abs_error = max(self.max_abs_error, float(abs_err))
        self.failures += int(failed)

    def merge(self, other: "GradCheckReport"):
        self.instances += other.instances
        self.max_rel_error = max(self.max_rel_error, other.max_rel_error)
        self.max_abs_error = max(self.max_abs_error, other.max_abs_error)
        self.failures += other.failures
        self.skipped += other.skipped


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-8, np.maximum(np.abs(a), np.abs(b)))


def min_adjacent_gap(x):
    s = np.sort(np.asarray(x, dtype=np.float64))
    return float(np.min(np.diff(s))) if s.size > 1 else np.inf


def central_difference(f, x, step, guard=True):
    """``g_i = (f(x + step e_i) - f(x - step e_i)) / (2 step)``.

    ``f`` may return floats or gmpy2 numbers; the difference is taken in
    whatever arithmetic ``f`` uses and divided by the exact perturbation
    actually applied. With ``guard`` set the call raises :class:`GapError`
    unless the smallest gap between sorted entries exceeds ``2 * step``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    if guard and min_adjacent_gap(x) <= 2 * step:
        raise GapError(f"min adjacent gap {min_adjacent_gap(x):.3g} <= 2*step")
    g = np.empty(x.size)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        denom = float(Fraction(float(xp[i])) - Fraction(float(xm[i])))
        g[i] = float(f(xp) - f(xm)) / denom
    return g


def fd_step(tau):
    return STEP * min(1.0, tau)


# -- high-precision oracles ------------------------------------------------

def _hp():
    return gmpy2.context(precision=PRECISION_BITS)


def _sorted_desc(x):
    x = np.asarray(x, dtype=np.float64)
    return np.lexsort((np.arange(x.size), -x))


def _hp_theta(x, k):
    order = _sorted_desc(x)
    return (gmpy2.mpfr(float(x[order[k - 1]])) + gmpy2.mpfr(float(x[order[k]]))) / 2


class _SeparableOracle:
    """Sum of per-item terms ``term(x_i, theta)`` in 140-bit arithmetic.

    The first call fixes a reference point. Later calls whose threshold is
    unchanged reuse the reference sum and only recompute the items that
    moved; the result is the same full sum, computed in O(moved) terms.
    """

    def __init__(self, k, tau):
        self.k = k
        self.tau = tau
        self._ref = None

    def _terms(self, x, theta):
        raise NotImplementedError

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        with _hp():
            theta = _hp_theta(x, self.k)
            if self._ref is not None and theta == self._ref[1]:
                x0, _, terms0, total0 = self._ref
                moved = np.flatnonzero(x != x0)
                new = self._terms(x[moved], theta, moved)
                return total0 + sum(new) - sum(terms0[i] for i in moved)
            terms = self._terms(x, theta, np.arange(x.size))
            total = sum(terms)
            if self._ref is None:
                self._ref = (x.copy(), theta, terms, total)
            return total


class HPTopKLoss(_SeparableOracle):
    """Mean BCE of the soft Top-K mask, evaluated in 140-bit arithmetic."""

    def __init__(self, y, k, tau):
        super().__init__(k, tau)
        self.y = [int(v) for v in y]

    def _terms(self, xs, theta, idx):
        t = gmpy2.mpfr(self.tau)
        n = len(self.y)
        out = []
        for xi, i in zip(xs, idx):
            z = (gmpy2.mpfr(float(xi)) - theta) / t
            out.append(gmpy2.log1p(gmpy2.exp(-z if self.y[i] else z)) / n)
        return out


class HPTopKProjection(_SeparableOracle):
    """``upstream . f_k(x)`` in 140-bit arithmetic (oracle for the VJP)."""

    def __init__(self, upstream, k, tau):
        super().__init__(k, tau)
        self.u = [float(v) for v in upstream]

    def _terms(self, xs, theta, idx):
        t = gmpy2.mpfr(self.tau)
        return [self.u[i] / (1 + gmpy2.exp(-(gmpy2.mpfr(float(xi)) - theta) / t)) for xi, i in zip(xs, idx)]


def hp_permutation_loss(x, y, K, tau, kind):
    """Negative expected Top-K under NeuralSort/SoftSort, in 140-bit arithmetic."""
    with _hp():
        xs = [gmpy2.mpfr(float(v)) for v in x]
        n = len(xs)
        t = gmpy2.mpfr(tau)
        if kind == "neuralsort":
            b = [sum(abs(xj - xl) for xl in xs) for xj in xs]
            rows = [[((n + 1 - 2 * (i + 1)) * xs[j] - b[j]) / t for j in range(n)] for i in range(K)]
        else:
            order = _sorted_desc(x)
            rows = [[-abs(xs[order[i]] - xs[j]) / t for j in range(n)] for i in range(K)]
        total = gmpy2.mpfr(0)
        for z in rows:
            top = max(z)
            w = [gmpy2.exp(v - top) for v in z]
            total += sum(wj for wj, yj in zip(w, y) if yj) / sum(w)
        return -total


# -- the suite -------------------------------------------------------------

CHECKS = (
    "selection_oracle",
    "scaling_selection",
    "monotonicity",
    "translation_invariance",
    "boundary_complement",
    "approximation",
    "zero_sum_gradient",
    "grad_dftopk_loss",
    "grad_dftopk_vjp",
    "strict_residual",
    "perm_row_stochastic",
    "perm_hard_limit",
    "perm_expected_topk_hard",
    "grad_permutation_loss",
)


def _draw_instance(rng, n=None):
    n = int(rng.choice(SIZES)) if n is None else n
    k = int(rng.integers(1, n))
    tau = float(rng.choice(TAUS))
    x = rng.normal(size=n)
    if rng.random() < 0.25:
        x = np.round(x * 4) / 4  # coarse grid -> ties
    y = np.zeros(n)
    y[rng.choice(n, int(rng.integers(1, n)), replace=False)] = 1.0
    return x, y, k, tau


def _draw_separated(rng, n, gap):
    """Resample standard-normal vectors until every adjacent gap exceeds ``gap``."""
    while True:
        x = rng.normal(size=n)
        if min_adjacent_gap(x) > gap:
            return x


def _oracle_order(x):
    return _sorted_desc(x)


def _check_instance(i, seed, loss_backward):
    rng = np.random.default_rng([seed, i])
    x, y, k, tau = _draw_instance(rng)
    n = x.size
    cfg = TopKConfig(k, tau)
    out = {name: GradCheckReport(name) for name in CHECKS}

    # selection vs full sort, both selection routes, ties included
    order = _oracle_order(x)
    want = (int(order[k - 1]), int(order[k]))
    bad = 0
    for method in ("partition", "introselect"):
        p = core.select_rank_pair(x, k, method)
        bad += (p.kth_index, p.kplus1_index) != want
        bad += (p.kth_value, p.kplus1_value) != (x[want[0]], x[want[1]])
    hard = np.zeros(n, dtype=np.int64)
    hard[order[:k]] = 1
    bad += not np.array_equal(core.hard_topk(x, k), hard)
    out["selection_oracle"].record(failed=bad > 0)

    a = float(np.exp(rng.uniform(np.log(1e-3), np.log(1e3))))
    p1, p2 = core.select_rank_pair(x, k), core.select_rank_pair(a * x, k)
    out["scaling_selection"].record(
        failed=(p1.kth_index, p1.kplus1_index) != (p2.kth_index, p2.kplus1_index)
    )

    probs, pair = core.dftopk_forward(x, cfg, return_pair=True)
    asc = np.argsort(x, kind="stable")
    ok = np.all(np.diff(probs[asc]) >= 0) and np.all((probs >= 0) & (probs <= 1))
    out["monotonicity"].record(failed=not ok)

    # dyadic grid: the shift x + c is exact, so any deviation is the operator's
    grid = 2.0**-24
    xq = np.round(x / grid) * grid
    c = np.round(rng.uniform(-1e6, 1e6) / grid) * grid
    dev = np.max(np.abs(core.dftopk_forward(xq + c, cfg) - core.dftopk_forward(xq, cfg)))
    out["translation_invariance"].record(abs_err=dev, failed=dev > TRANSLATION_ATOL)

    dev = abs(probs[pair.kth_index] + probs[pair.kplus1_index] - 1.0)
    out["boundary_complement"].record(abs_err=dev, failed=dev > COMPLEMENT_ATOL)

    g = pair.kth_value - pair.kplus1_value
    if g > 0:
        sharp = TopKConfig(k, g / 100)
        dev = np.max(np.abs(core.dftopk_forward(x, sharp) - core.hard_topk(x, k)))
        bound = expit(-g / (2 * sharp.tau))
        out["approximation"].record(abs_err=dev, failed=dev > bound * (1 + 1e-9))
    else:
        out["approximation"].skipped += 1

    grad = loss_backward(x, y, cfg)
    total = abs(float(np.sum(grad)))
    out["zero_sum_gradient"].record(abs_err=total, failed=total > 1e-12 * n)

    # gradient checks on a gap-guarded vector
    h = fd_step(tau)
    xs = _draw_separated(rng, n, 2 * h)
    analytic = loss_backward(xs, y, cfg)
    numeric = central_difference(HPTopKLoss(y, k, tau), xs, h)
    r = rel_error(analytic, numeric)
    out["grad_dftopk_loss"].record(r.max(), np.abs(analytic - numeric).max(), (r >= GRAD_RTOL).sum())

    u = rng.normal(size=n)
    analytic = core.dftopk_vjp(xs, cfg, u)
    numeric = central_difference(HPTopKProjection(u, k, tau), xs, h)
    r = rel_error(analytic, numeric)
    out["grad_dftopk_vjp"].record(r.max(), np.abs(analytic - numeric).max(), (r >= GRAD_RTOL).sum())

    theta = core.strict_threshold(x, cfg, STRICT_EPS)
    res = abs(expit((x - theta) / tau).sum() - k)
    out["strict_residual"].record(abs_err=res, failed=res > STRICT_EPS)

    for kind in baselines.KINDS:
        P = baselines.soft_permutation(x, tau, kind)
        dev = np.abs(P.sum(axis=1) - 1).max()
        ok = dev <= ROW_SUM_ATOL and np.all((P >= 0) & (P <= 1))
        out["perm_row_stochastic"].record(abs_err=dev, failed=not ok)

        gap = min_adjacent_gap(xs)
        Pl = baselines.soft_permutation(xs, gap / 100, kind)
        dev = np.abs(Pl - baselines.hard_permutation(xs)).max()
        out["perm_hard_limit"].record(abs_err=dev, failed=dev > HARD_LIMIT_ATOL)

        K = int(rng.integers(1, n + 1))
        e = baselines.expected_topk(baselines.hard_permutation(x), y, K)
        out["perm_expected_topk_hard"].record(failed=e != y[order[:K]].sum())

        if n <= PERM_GRAD_MAX_N:
            K = int(rng.integers(1, n + 1))
            analytic = baselines.permutation_loss_backward(xs, y, K, tau, kind)
            numeric = central_difference(lambda z: hp_permutation_loss(z, y, K, tau, kind), xs, h)
            r = rel_error(analytic, numeric)
            out["grad_permutation_loss"].record(
                r.max(), np.abs(analytic - numeric).max(), (r >= PERM_GRAD_RTOL).sum()
            )
        else:
            out["grad_permutation_loss"].skipped += 1
    return out


def _run_chunk(args):
    seed, indices, loss_backward = args
    merged = {name: GradCheckReport(name) for name in CHECKS}
    for i in indices:
        for name, rep in _check_instance(i, seed, loss_backward).items():
            merged[name].merge(rep)
    return merged


def run_property_suite(seed=0, instances=1000, loss_backward=None, workers=1):
    """Run every operator property over seeded random instances.

    Returns one :class:`GradCheckReport` per check, in :data:`CHECKS` order.
    Instance ``i`` draws from ``default_rng([seed, i])``, so results do not
    depend on ``workers``.
    """
    if instances < 1:
        raise ValueError("instances must be >= 1")
    loss_backward = loss_backward or core.dftopk_loss_backward
    reports = {name: GradCheckReport(name) for name in CHECKS}
    chunks = [(seed, range(j, instances, workers), loss_backward) for j in range(workers)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, chunks))
    else:
        results = [_run_chunk(chunks[0])]
    for res in results:
        for name, rep in res.items():
            reports[name].merge(rep)
    return [reports[name] for name in CHECKS]


def flipped_loss_backward(x, y, cfg, pair=None):
    """Deliberately wrong backward (sign flipped); the suite must reject it."""
    return -core.dftopk_loss_backward(x, y, cfg, pair)


def thread_cap():
    """Worker cap from ``DFTOPK_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("DFTOPK_THREADS", "1")))
    except ValueError:
        return 1


def format_reports(reports):
    lines = []
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        lines.append(
            f"{status} {r.op_name:<26} instances={r.instances:<5} skipped={r.skipped:<5} "
            f"failures={r.failures:<4} max_rel={r.max_rel_error:.3e} max_abs={r.max_abs_error:.3e}"
        )
    return "\n".join(lines)


def reports_csv(reports):
    rows = ["op_name,instances,skipped,failures,max_rel_error,max_abs_error,passed"]
    for r in reports:
        rows.append(
            f"{r.op_name},{r.instances},{r.skipped},{r.failures},"
            f"{r.max_rel_error:.6e},{r.max_abs_error:.6e},{int(r.passed)}"
        )
    return "\n".join(rows) + "\n"
