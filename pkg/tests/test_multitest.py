import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexhyp.errors import ValidationError
from convexhyp.multitest import (MAXMIN, MINMAX, SADDLE, ClosenessRelation, DetectorMatrix, chain_blocks,
                                 closeness_shifts, multi_sample_bound, multiple_unions, run_multitest,
                                 shifted_objective, union_assemble, weighted_shifts)
from convexhyp.pairtest import PairProblem, solve_pair
from convexhyp.schemes import GaussianFactor, make_rng, sample_obs, single
from convexhyp.sets import box


def const(v):
    """Detector returning a fixed value for every observation in the batch."""
    def d(obs):
        return np.full(np.shape(obs)[:1], float(v)) if np.ndim(obs) else float(v)
    return d


# --- union tests -------------------------------------------------------------

def test_union_rank_one_example():
    E = [[0.1, 0.2], [0.2, 0.4]]
    u = union_assemble(E, [[const(0)] * 2] * 2)
    assert u.eps == pytest.approx(0.5)
    assert np.allclose(u.a, [[0, math.log(2)], [-math.log(2), 0]])


def test_union_degenerate():
    u = union_assemble([[0.3]], [[const(1.5)]])
    assert u.eps == pytest.approx(0.3) and u.a[0, 0] == 0.0
    assert u(np.zeros(1)) == pytest.approx(1.5)


def test_union_row_col_sum_bound():
    rng = np.random.default_rng(7)
    E = rng.random((5, 5))
    r = max(E.sum(axis=0).max(), E.sum(axis=1).max())
    assert union_assemble(E, [[const(0)] * 5] * 5).eps <= r


def test_union_rejects_nonpositive():
    with pytest.raises(ValidationError):
        union_assemble([[0.1, 0.0]], [[const(0), const(0)]])


def _gauss_union():
    sch = single(GaussianFactor(2))
    Xs = [box([1, 1], [2, 2]), box([1, -2], [2, -1])]
    Ys = [box([-2, 0], [-1, 0]), box([-2, 3], [-1, 4])]
    sols = [[solve_pair(PairProblem(sch, X, Y)) for Y in Ys] for X in Xs]
    E = np.array([[s.eps_star for s in row] for row in sols])
    dets = [[s.detector for s in row] for row in sols]
    return sch, Xs, Ys, union_assemble(E, dets)


def test_union_ordering_and_risk():
    sch, Xs, Ys, u = _gauss_union()
    obs = sample_obs(sch, np.zeros(2), make_rng(0), (200,))
    lo, mid, hi = u(obs, MAXMIN), u(obs, SADDLE), u(obs, MINMAX)
    assert np.all(lo <= mid + 1e-9) and np.all(mid <= hi + 1e-9)
    N = 100_000
    for X in Xs:
        for corner in itertools.product(*zip(X.lower, X.upper)):
            for mode in (MAXMIN, SADDLE) if corner == tuple(X.lower) else (MAXMIN,):
                n = 2000 if mode == SADDLE else N
                v = np.exp(-u(sample_obs(sch, np.array(corner), make_rng(1), (n,)), mode))
                assert v.mean() <= u.eps + 3 * v.std() / math.sqrt(n)
    for Y in Ys:
        v = np.exp(u(sample_obs(sch, Y.lower, make_rng(2), (N,))))
        assert v.mean() <= u.eps + 3 * v.std() / math.sqrt(N)


def test_union_convex_hull_mixture():
    # sampling from a mixture of members of X_1 and X_2 keeps the bound
    sch, Xs, Ys, u = _gauss_union()
    rng = make_rng(3)
    N = 100_000
    pick = rng.random(N) < 0.3
    mu = np.where(pick[:, None], Xs[0].lower, Xs[1].upper)
    obs = [mu[:, None, :] + rng.standard_normal((N, 1, 2))]
    v = np.exp(-u(obs))
    assert v.mean() <= u.eps + 3 * v.std() / math.sqrt(N)


def test_chained_blocks_multiply():
    E1, E2 = [[0.1, 0.2], [0.2, 0.4]], [[0.3]]
    c = chain_blocks([union_assemble(E1, [[const(1)] * 2] * 2), union_assemble(E2, [[const(2)]])])
    assert c.eps == pytest.approx(0.15)
    assert c([np.zeros(1), np.zeros(1)]) == pytest.approx(1 + 2 + max(min(0, -math.log(2)), min(math.log(2), 0)))


# --- weighted shifts -----------------------------------------------------------

def test_weighted_shifts_examples():
    r = weighted_shifts([[0, 0.3], [0.3, 0]])
    assert r.eps == pytest.approx(0.3) and np.allclose(r.alpha, 0)
    r = weighted_shifts([[0, 0.3], [0.3, 0]], p=[1, 4])
    assert r.eps == pytest.approx(0.6) and r.alpha[0, 1] == pytest.approx(math.log(2))
    c = 0.07
    r = weighted_shifts(c * (np.ones((3, 3)) - np.eye(3)))
    assert r.eps == pytest.approx(2 * c) and np.allclose(r.alpha, 0, atol=1e-10)


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_weighted_shifts_equalize_and_optimal(seed, M):
    rng = np.random.default_rng(seed)
    E = rng.uniform(0.01, 0.5, (M, M))
    E = (E + E.T) / 2
    np.fill_diagonal(E, 0)
    p = rng.uniform(0.2, 3, M)
    r = weighted_shifts(E, p)
    assert np.allclose(r.alpha, -r.alpha.T)
    assert np.allclose(r.row_sums, r.eps, atol=1e-8)
    for _ in range(20):
        B = rng.normal(scale=0.3, size=(M, M))
        val, _ = shifted_objective(E, r.alpha + B - B.T, p=p)
        assert val >= r.eps - 1e-10


# --- closeness -----------------------------------------------------------------

def test_closeness_diagonal_reduces_to_weighted():
    E = np.array([[0, 0.2, 0.1], [0.2, 0, 0.3], [0.1, 0.3, 0]])
    a = closeness_shifts(E, ClosenessRelation.diagonal(3))
    b = weighted_shifts(E)
    assert a.eps == pytest.approx(b.eps, abs=1e-10)


def test_closeness_partition_example():
    E = np.array([[0, 0.2, 0.1], [0.2, 0, 0.3], [0.1, 0.3, 0]])
    C = ClosenessRelation.from_partition([[0, 1], [2]])
    r = closeness_shifts(E, C)
    D = E.copy()
    D[0, 1] = D[1, 0] = 0
    assert r.eps == pytest.approx(np.linalg.svd(D, compute_uv=False)[0], abs=1e-8)
    assert r.gap <= 1e-10


def test_closeness_fully_close_rows_contribute_zero():
    E = np.full((3, 3), 0.2)
    C = ClosenessRelation(3, frozenset({(0, 1), (0, 2)}))
    r = closeness_shifts(E, C)
    assert r.row_sums[0] == 0.0
    with pytest.raises(ValidationError):
        closeness_shifts(E, ClosenessRelation(3, frozenset(itertools.product(range(3), range(3)))))


def _cvx_closeness(E, C):
    cp = pytest.importorskip("cvxpy")
    M = E.shape[0]
    far = ~C.mask()
    B = cp.Variable((M, M))
    A = B - B.T
    t = cp.Variable()
    cons = []
    for i in range(M):
        terms = [E[i, j] * cp.exp(A[i, j]) for j in range(M) if far[i, j]]
        if terms:
            cons.append(sum(terms) <= t)
    prob = cp.Problem(cp.Minimize(t), cons)
    prob.solve()
    return prob.value


@given(st.integers(0, 10_000), st.integers(2, 5), st.floats(0.0, 0.6))
def test_closeness_matches_cvxpy(seed, M, density):
    rng = np.random.default_rng(seed)
    E = rng.uniform(0.02, 0.5, (M, M))
    np.fill_diagonal(E, 0)
    pairs = {(i, j) for i in range(M) for j in range(M) if i != j and rng.random() < density}
    C = ClosenessRelation(M, frozenset(pairs))
    if not (~C.mask()).any():
        return
    r = closeness_shifts(E, C)
    assert np.allclose(r.alpha, -r.alpha.T)
    ref = _cvx_closeness(E, C)
    assert r.eps == pytest.approx(ref, abs=1e-5, rel=1e-5)
    assert r.gap <= 1e-6


# --- running the test ------------------------------------------------------------

def _dm(values):
    """DetectorMatrix with constant detectors phi_ij = values[(i, j)]."""
    M = 1 + max(max(k) for k in values)
    E = np.full((M, M), 0.1)
    np.fill_diagonal(E, 0)
    return DetectorMatrix(M, {k: const(v) for k, v in values.items()}, E)


def test_run_multitest_examples():
    C2 = ClosenessRelation.diagonal(2)
    a = np.zeros((2, 2))
    assert run_multitest(_dm({(0, 1): 1.0}), a, C2, 0.0) == [0]
    assert run_multitest(_dm({(0, 1): 0.0}), a, C2, 0.0) == []
    dm = _dm({(0, 1): -0.5, (0, 2): 1.0, (1, 2): 2.0})
    C = ClosenessRelation(3, frozenset({(0, 1), (1, 0)}))
    assert run_multitest(dm, np.zeros((3, 3)), C, 0.0) == [0, 1]


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_diagonal_closeness_accepts_at_most_one(seed, M):
    rng = np.random.default_rng(seed)
    vals = {(i, j): float(rng.normal()) for i in range(M) for j in range(i + 1, M)}
    dm = _dm(vals)
    B = rng.normal(size=(M, M))
    alpha = B - B.T
    acc = run_multitest(dm, alpha, ClosenessRelation.diagonal(M), 0.0)
    assert len(acc) <= 1
    V = dm.values(0.0)
    assert np.allclose(V - alpha, -(V - alpha).T)


def test_multiple_unions_examples():
    E = np.array([[0, 0.2, 0.1, 0.05], [0.2, 0, 0.3, 0.1], [0.1, 0.3, 0, 0.2], [0.05, 0.1, 0.2, 0]])
    vals = {(i, j): 1.0 for i in range(4) for j in range(i + 1, 4)}
    dm = DetectorMatrix(4, {k: const(v) for k, v in vals.items()}, E)
    single_blocks = multiple_unions([[0], [1], [2], [3]], dm, 0.0)
    direct = run_multitest(dm, single_blocks.shifts.alpha, ClosenessRelation.diagonal(4), 0.0)
    assert single_blocks.accepted == (direct[0] if direct else None)
    r = multiple_unions([[0, 1], [2, 3]], dm, 0.0)
    D = E.copy()
    D[0, 1] = D[1, 0] = D[2, 3] = D[3, 2] = 0
    assert r.eps == pytest.approx(np.linalg.svd(D, compute_uv=False)[0])
    G = np.array([[np.linalg.svd(D[np.ix_(a, b)], compute_uv=False)[0] for b in ([0, 1], [2, 3])]
                  for a in ([0, 1], [2, 3])])
    assert r.eps_two_stage == pytest.approx(np.linalg.svd(G, compute_uv=False)[0])
    assert r.eps <= r.eps_two_stage + 1e-12
    with pytest.raises(ValidationError):
        multiple_unions([[0, 1], [1, 2, 3]], dm)


def test_multiple_unions_rank_one():
    # two blocks of one hypothesis each, pair risk 0.5
    E = np.array([[0, 0.5], [0.5, 0]])
    dm = DetectorMatrix(2, {(0, 1): const(0.2)}, E)
    r = multiple_unions([[0], [1]], dm, 0.0)
    assert r.eps == pytest.approx(0.5) and r.accepted == 0


def test_multi_sample_bound_examples():
    assert multi_sample_bound(0.01, 5, 10) == 39
    assert multi_sample_bound(0.01, 1, 10) == 29
    with pytest.raises(ValidationError):
        multi_sample_bound(0.3, 5, 10)
