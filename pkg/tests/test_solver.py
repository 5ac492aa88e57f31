import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexhyp.errors import NonFiniteObjective, ValidationError
from convexhyp.schemes import DiscreteFactor, single
from convexhyp.sets import PolytopeSpec, box, simplex, singleton
from convexhyp.solver import (FWConfig, bisect_max_param, expm, gaussian_tail, gaussian_tail_inv,
                              least_squares_polytope, maximize_concave, perron_positive,
                              spectral_norm_nonneg)

METHODS = ["newton", "fw"]


def _proj_objective(target):
    target = np.asarray(target, dtype=float)

    def f(z):
        d = z - target
        return -float(d @ d), -2.0 * d
    return f, lambda z: 2.0 * np.eye(target.size)


@pytest.mark.parametrize("method", METHODS)
def test_projection_onto_box(method):
    f, h = _proj_objective([3.0, 0.0])
    r = maximize_concave(f, [box([1, 0], [2, 0])], FWConfig(method=method), hess=h)
    assert np.allclose(r.point, [2, 0], atol=1e-7)
    assert r.value == pytest.approx(-1.0, abs=1e-7)
    assert r.converged and r.gap <= 1e-7


@pytest.mark.parametrize("method", METHODS)
def test_closest_points_between_boxes(method):
    def f(z):
        d = z[:2] - z[2:]
        return -0.25 * float(d @ d), np.concatenate([-0.5 * d, 0.5 * d])

    def h(z):
        S = 0.5 * np.eye(2)
        return np.block([[S, -S], [-S, S]])
    sets = [box([1, 0], [2, 0]), box([-2, 0], [-1, 0])]
    r = maximize_concave(f, sets, FWConfig(method=method), hess=h)
    assert r.value == pytest.approx(-1.0, abs=1e-7)
    assert np.allclose(r.point, [1, 0, -1, 0], atol=1e-6)


def _discrete_pair(floor=1e-9):
    X = PolytopeSpec.from_constraints([floor, floor], [1, 1], ineq=[([1, 0], 0.4)], eq=[([1, 1], 1.0)])
    Y = PolytopeSpec.from_constraints([floor, floor], [1, 1], ineq=[([-1, 0], -0.6)], eq=[([1, 1], 1.0)])
    sch = single(DiscreteFactor(2))

    def f(z):
        v, gx, gy = sch.psi_total(z[:2], z[2:])
        return v, np.concatenate([gx, gy])
    return f, (lambda z: sch.neg_hessian_total(z[:2], z[2:])), [X, Y]


def _grid_oracle(step=1e-3):
    # x1 in [0, 0.4], y1 in [0.6, 1]; the objective only depends on the pair
    x = np.linspace(0.0, 0.4, int(round(0.4 / step)) + 1)
    y = np.linspace(0.6, 1.0, int(round(0.4 / step)) + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    s = np.sqrt(X * Y) + np.sqrt((1 - X) * (1 - Y))
    with np.errstate(divide="ignore"):
        return float(np.max(2 * np.log(s)))


@pytest.mark.parametrize("method", METHODS)
def test_discrete_affinity_example(method):
    f, h, sets = _discrete_pair()
    r = maximize_concave(f, sets, FWConfig(method=method), hess=h)
    ref = _grid_oracle()
    assert r.value == pytest.approx(2 * math.log(0.979796), abs=2e-6)
    assert abs(r.value - ref) <= 1e-6
    assert r.value >= ref - 1e-12


@pytest.mark.parametrize("method", METHODS)
def test_history_monotone_and_gap_bounds_suboptimality(method):
    f, h, sets = _discrete_pair()
    r = maximize_concave(f, sets, FWConfig(method=method, gap_tol=1e-10), hess=h, record=True)
    vals = [v for v, _ in r.history]
    assert all(b >= a - 1e-13 for a, b in zip(vals, vals[1:]))
    fstar = 2 * math.log(math.sqrt(0.4 * 0.6) + math.sqrt(0.6 * 0.4))
    for v, g in r.history:
        assert g >= fstar - v - 1e-12


def test_max_iters_returns_best_iterate_with_gap():
    # optimum (0.5, 0.3, 0.2) lies inside a face, so one FW step cannot reach it
    f, _ = _proj_objective([0.6, 0.4, 0.3])
    r = maximize_concave(f, [simplex(3)], FWConfig(method="fw", max_iters=1, gap_tol=1e-14))
    assert not r.converged and r.gap > 0
    fstar = -3 * (0.1 ** 2)
    assert r.gap >= fstar - r.value - 1e-12


def test_nonfinite_objective_raises():
    def f(z):
        return float("nan"), np.zeros_like(z)
    with pytest.raises(NonFiniteObjective):
        maximize_concave(f, [box([0.0], [1.0])], FWConfig(method="fw"))


def test_config_validation():
    with pytest.raises(ValidationError):
        FWConfig(gap_tol=0)
    with pytest.raises(ValidationError):
        FWConfig(max_iters=0)
    with pytest.raises(ValidationError):
        FWConfig(method="sgd")


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_projection_gap_certifies(seed, n):
    # projection of a random point onto a random box-with-cut: compare with LSQ
    rng = np.random.default_rng(seed)
    t = rng.normal(scale=2, size=n)
    S = PolytopeSpec(np.full(n, -1.0), np.full(n, 1.0), rng.normal(size=(1, n)), [0.3])
    f, h = _proj_objective(t)
    r = maximize_concave(f, [S], FWConfig(gap_tol=1e-10), hess=h)
    ls = least_squares_polytope(np.eye(n), t, S)
    assert r.gap >= -ls.value - r.value - 1e-9
    assert r.value == pytest.approx(-ls.value, abs=1e-7)


# --- least squares over a polytope vs cvxpy ---------------------------------

@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 8))
def test_lsq_matches_cvxpy(seed, n, m):
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(m, n))
    b = rng.normal(size=m) * 3
    A = rng.normal(size=(2, n))
    S = PolytopeSpec(np.full(n, -1.0), np.full(n, 1.0), A, np.full(2, 0.5),
                     np.ones((1, n)) if n > 1 else None, [0.2] if n > 1 else None)
    r = least_squares_polytope(M, b, S)
    z = cp.Variable(n)
    cons = [z >= -1, z <= 1, A @ z <= 0.5]
    if n > 1:
        cons.append(cp.sum(z) == 0.2)
    ref = cp.Problem(cp.Minimize(cp.sum_squares(M @ z - b)), cons).solve()
    assert S.violation(r.point) <= 1e-8
    assert r.value == pytest.approx(ref, rel=1e-5, abs=1e-6)
    assert r.value - r.gap <= ref + 1e-6


# --- Perron-Frobenius --------------------------------------------------------

def test_spectral_norm_examples():
    s, g, h = spectral_norm_nonneg([[0.1, 0.2], [0.2, 0.4]])
    assert s == pytest.approx(0.5, rel=1e-10)
    assert np.allclose(g / g[0], [1, 2]) and np.allclose(h / h[0], [1, 2])
    assert spectral_norm_nonneg([[0.7]])[0] == pytest.approx(0.7)
    assert spectral_norm_nonneg(np.eye(2))[0] == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        spectral_norm_nonneg(np.zeros((2, 2)))


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
def test_spectral_norm_properties(seed, m, n):
    rng = np.random.default_rng(seed)
    E = rng.random((m, n)) * (rng.random((m, n)) < 0.7)
    if not np.any(E > 0):
        E[0, 0] = 1.0
    s, g, h = spectral_norm_nonneg(E)
    assert s == pytest.approx(np.linalg.norm(E, 2), rel=1e-10)
    assert s <= max(E.sum(axis=0).max(), E.sum(axis=1).max()) + 1e-12
    assert np.all(g >= -1e-14) and np.all(h >= -1e-14)
    assert np.allclose(E @ h, s * g, atol=1e-8) and np.allclose(E.T @ g, s * h, atol=1e-8)
    Ep = E + 0.01
    _, gp, hp = spectral_norm_nonneg(Ep)
    assert np.all(gp > 0) and np.all(hp > 0)


def test_perron_examples():
    r, g = perron_positive([[0, 0.3], [0.3, 0]])
    assert r == pytest.approx(0.3) and np.allclose(g, [1 / math.sqrt(2)] * 2)
    r, g = perron_positive([[0, 0.3], [1.2, 0]])
    assert r == pytest.approx(0.6, rel=1e-10) and g[1] / g[0] == pytest.approx(2.0)
    r, g = perron_positive(0.2 * (np.ones((3, 3)) - np.eye(3)))
    assert r == pytest.approx(0.4) and np.allclose(g, g[0])
    with pytest.raises(ValidationError):
        perron_positive([[0, 0], [1, 0]])


@given(st.integers(0, 10_000), st.integers(2, 7))
def test_perron_equalization(seed, n):
    rng = np.random.default_rng(seed)
    E = rng.uniform(0.01, 1.0, (n, n))
    np.fill_diagonal(E, 0)
    rho, g = perron_positive(E)
    assert np.all(g > 0) and np.linalg.norm(g) == pytest.approx(1.0)
    assert np.allclose(E @ g, rho * g, atol=1e-8)
    alpha = np.log(g)[None, :] - np.log(g)[:, None]
    assert np.allclose((E * np.exp(alpha)).sum(axis=1), rho, atol=1e-8)
    assert rho == pytest.approx(max(abs(np.linalg.eigvals(E))), rel=1e-9)


# --- bisection, normal tail, expm -------------------------------------------

def test_bisect_examples():
    assert bisect_max_param(lambda r: r <= 0.3, 0.0, 1.0, 1e-6) == pytest.approx(0.3, abs=1e-6)
    assert bisect_max_param(lambda r: r <= 0.3, 0.0, 1.0, 1e-6) <= 0.3
    assert bisect_max_param(lambda r: True, 0.0, 1.0, 1e-6) == 1.0
    with pytest.raises(ValidationError):
        bisect_max_param(lambda r: False, 0.0, 1.0, 1e-6)


def test_gaussian_tail_examples():
    from mpmath import mp, erfc, findroot, sqrt
    mp.dps = 40
    assert gaussian_tail(0.0) == 0.5
    for s, ref in ((0.025, 1.959964), (0.0125, 2.241403)):
        t = gaussian_tail_inv(s)
        assert t == pytest.approx(ref, abs=5e-7)
        # high-precision oracle
        exact = findroot(lambda u: erfc(u / sqrt(2)) / 2 - s, ref)
        assert abs(t - float(exact)) < 1e-12
    with pytest.raises(ValidationError):
        gaussian_tail_inv(1.0)


@given(st.floats(1e-300, 1 - 1e-16))
def test_gaussian_tail_roundtrip(s):
    assert abs(gaussian_tail(gaussian_tail_inv(s)) - s) <= 1e-12


@given(st.floats(-30, 30), st.floats(0, 5))
def test_gaussian_tail_monotone(t, d):
    assert gaussian_tail(t + d) <= gaussian_tail(t)


def test_expm_examples():
    assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))
    e = math.exp(-2)
    ref = 0.5 * np.array([[1 + e, 1 - e], [1 - e, 1 + e]])
    assert np.allclose(expm([[-1, 1], [1, -1]]), ref, rtol=1e-12, atol=0)
    assert np.allclose(ref, [[0.567668, 0.432332], [0.432332, 0.567668]], atol=1e-6)


@given(st.integers(0, 10_000), st.integers(1, 6), st.floats(0.01, 20))
def test_expm_properties(seed, n, scale):
    from scipy.linalg import expm as sp_expm
    rng = np.random.default_rng(seed)
    L = rng.random((n, n)) * scale
    np.fill_diagonal(L, 0)
    L -= np.diag(L.sum(axis=0))
    E = expm(L)
    assert np.allclose(E.sum(axis=0), 1, atol=1e-10)
    assert np.allclose(E @ expm(-L), np.eye(n), atol=1e-8) or scale * n > 10
    G = rng.normal(size=(n, n))
    ref = sp_expm(G)
    assert np.max(np.abs(expm(G) - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))
