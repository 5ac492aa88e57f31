"""Markov chain models: queueing chains, random walks, and hypothesis sets
for observed transitions or observed states."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..errors import ValidationError
from ..pairtest import PairProblem
from ..schemes import DiscreteFactor, ProductScheme
from ..sets import LinearImage, LPOracle, PolytopeSpec, simplex
from ..solver import expm

__all__ = [
    "queueing_chain",
    "random_walk_matrix",
    "bin_matrix",
    "floor_channel",
    "entrywise_cones",
    "MarkovSpec",
    "MarkovPlan",
    "TrajectoryLR",
    "markov_pair_plan",
    "markov_Z_sets",
    "common_support",
    "markov_pair_problem",
    "transition_matrix_from_pairs",
]


def _check_stochastic(S, name="matrix", tol=1e-10):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2:
        raise ValidationError("%s must be 2-D" % name)
    if np.any(S < -tol):
        raise ValidationError("%s has negative entries" % name)
    if np.max(np.abs(S.sum(axis=0) - 1.0)) > tol:
        raise ValidationError("%s is not column-stochastic" % name)
    return S


def queueing_chain(lam: float, mu: float, s: int, b: int):
    """Rate matrix and unit-time transition matrix of an M/M/s/s+b queue.

    State j (1-based) means j-1 customers in the system; columns index the
    source state so that distributions evolve as ``p -> S p``.
    """
    if not (lam >= 0 and mu > 0) or s < 0 or b < 0:
        raise ValidationError("need lam >= 0, mu > 0, s >= 0, b >= 0")
    n = s + b + 1
    L = np.zeros((n, n))
    for j in range(1, n + 1):
        sj = min(j - 1, s)
        if j > 1:
            L[j - 2, j - 1] = sj * mu
        if j < n:
            L[j, j - 1] = lam
    L -= np.diag(L.sum(axis=0))
    S = expm(L)
    return L, S


def random_walk_matrix(n: int, p: float) -> np.ndarray:
    """Walk on an n-cycle: stay with prob 1-2p, step to each neighbour with prob p."""
    if not 0 <= p <= 0.5:
        raise ValidationError("p must lie in [0, 1/2]")
    S = (1 - 2 * p) * np.eye(n)
    for j in range(n):
        S[(j + 1) % n, j] += p
        S[(j - 1) % n, j] += p
    return S


def bin_matrix(bins: Sequence[Sequence[int]], n: int) -> np.ndarray:
    """Indicator matrix of a partition of states 1..n into bins."""
    B = np.zeros((len(bins), n))
    seen = []
    for a, members in enumerate(bins):
        for i in members:
            if not 1 <= i <= n:
                raise ValidationError("state %d outside 1..%d" % (i, n))
            B[a, i - 1] = 1.0
            seen.append(i)
    if sorted(seen) != list(range(1, n + 1)):
        raise ValidationError("bins must partition the states 1..%d" % n)
    return B


def floor_channel(A, eta: float = 1e-9):
    """Floor entries at ``eta`` and renormalize columns.

    Returns the floored matrix and the largest column-wise l1 change.
    """
    A = _check_stochastic(A, "channel")
    F = np.maximum(A, eta)
    F /= F.sum(axis=0, keepdims=True)
    return F, float(np.max(np.abs(F - A).sum(axis=0)))


def entrywise_cones(Q, rho: float) -> List[PolytopeSpec]:
    """Column sets {q in simplex : (1-rho) Q_j <= q <= (1+rho) Q_j}."""
    Q = _check_stochastic(Q, "nominal transition matrix")
    n = Q.shape[0]
    cols = []
    for j in range(n):
        lo = np.clip((1 - rho) * Q[:, j], 0, 1)
        up = np.clip((1 + rho) * Q[:, j], 0, 1)
        cols.append(PolytopeSpec(lo, up, None, None, np.ones((1, n)), [1.0]))
    return cols


@dataclass(frozen=True, eq=False)
class MarkovSpec:
    """One hypothesis about a chain.

    Q is the nominal transition matrix; ``rho`` the radius of the column-wise
    l1 uncertainty ball (observed-state model); ``cones`` optional per-column
    sets of admissible transition distributions (observed-transition model);
    ``A`` the observation channel (m x n for states, m x n^2 for transitions,
    None for direct observation); ``kappa`` the observation stride.
    """

    Q: np.ndarray
    rho: float = 0.0
    A: Optional[np.ndarray] = None
    kappa: int = 1
    cones: Optional[Sequence[PolytopeSpec]] = None

    def __post_init__(self):
        Q = _check_stochastic(self.Q, "Q")
        if Q.shape[0] != Q.shape[1]:
            raise ValidationError("Q must be square")
        if not 0 <= self.rho < 2:
            raise ValidationError("rho must lie in [0, 2)")
        if self.kappa < 1:
            raise ValidationError("kappa must be >= 1")
        if self.A is not None:
            _check_stochastic(self.A, "observation channel")

    @property
    def n(self):
        return np.asarray(self.Q).shape[0]


# ---------------------------------------------------------------------------
# two simple chains, full observation

class TrajectoryLR:
    """Half log-likelihood ratio of a state trajectory between two chains."""

    def __init__(self, S1, S2, floor: float = 1e-300):
        a = np.maximum(np.asarray(S1, dtype=float), floor)
        b = np.maximum(np.asarray(S2, dtype=float), floor)
        self.table = 0.5 * np.log(a / b)

    def __call__(self, traj):
        traj = np.asarray(traj, dtype=int)
        # traj[..., t] are 1-based states; transition t-1 -> t uses table[cur, prev]
        return np.sum(self.table[traj[..., 1:] - 1, traj[..., :-1] - 1], axis=-1)


@dataclass
class MarkovPlan:
    curve: np.ndarray  # curve[K-1] = eps*(K)
    K_min: Optional[int]
    detector: TrajectoryLR
    initial: np.ndarray  # maximizing initial distribution at K_min (or last K)


def markov_pair_plan(S1, S2, X: Optional[PolytopeSpec] = None, eps_target: float = 0.01,
                     K_max: int = 100_000, tol: float = 1e-12) -> MarkovPlan:
    """Risk curve of the likelihood-ratio test between two fully observed chains.

    eps*(K) = max over initial distributions p in X of 1^T M^K p with
    M = sqrt(S1 * S2) entrywise.
    """
    S1 = np.asarray(S1, dtype=float)
    S2 = np.asarray(S2, dtype=float)
    if S1.shape != S2.shape or S1.shape[0] != S1.shape[1]:
        raise ValidationError("transition matrices must be square and of equal size")
    for S, name in ((S1, "S1"), (S2, "S2")):
        if np.any(S < -1e-12):
            raise ValidationError("%s has a negative transition entry" % name)
        if np.max(np.abs(S.sum(axis=0) - 1)) > 1e-9:
            raise ValidationError("%s is not column-stochastic" % name)
    n = S1.shape[0]
    # roundoff in expm can leave entries of order 1e-17 of either sign
    M = np.sqrt(np.clip(S1, 0, None) * np.clip(S2, 0, None))
    oracle = None if X is None else LPOracle(X)
    r = np.ones(n)
    curve = []
    K_min = None
    p = np.ones(n) / n
    for K in range(1, K_max + 1):
        r = r @ M
        if oracle is None:
            j = int(np.argmax(r))
            val = float(r[j])
            p = np.eye(n)[j]
        else:
            p, v = oracle.minimize(-r)
            val = -v
        curve.append(val)
        if val <= eps_target + tol * eps_target:
            K_min = K
            break
    return MarkovPlan(np.array(curve), K_min, TrajectoryLR(S1, S2), p)


# ---------------------------------------------------------------------------
# composite hypotheses: sets of observation distributions

def _homogenized_column(Qj: PolytopeSpec, keep: np.ndarray):
    """Rows describing the cone {s q : s >= 0, q in Qj} on the kept coordinates."""
    n = Qj.dim
    ones = np.ones(n)
    ub_rows = []
    for i in range(n):
        if not keep[i]:
            continue
        if Qj.lower[i] > 0:
            r = Qj.lower[i] * ones
            r[i] -= 1.0
            ub_rows.append(r)
        if Qj.upper[i] < 1:
            r = -Qj.upper[i] * ones
            r[i] += 1.0
            ub_rows.append(r)
    for a, b in Qj.ineq:
        ub_rows.append(a - b * ones)
    eq_rows = []
    for c, d in Qj.eq:
        r = c - d * ones
        if np.max(np.abs(r)) > 1e-14:
            eq_rows.append(r)
    ub = np.array(ub_rows).reshape(-1, n)[:, keep]
    eq = np.array(eq_rows).reshape(-1, n)[:, keep]
    return ub, eq


def _cone_support(spec: MarkovSpec):
    n = spec.n
    cones = spec.cones if spec.cones is not None else entrywise_cones(spec.Q, 0.0)
    if len(cones) != n:
        raise ValidationError("need one column set per state")
    keep = np.zeros((n, n), dtype=bool)  # keep[i, j]: P_ij may be nonzero
    for j, Qj in enumerate(cones):
        has_simplex_row = any(np.allclose(c, 1.0) and abs(d - 1.0) < 1e-12 for c, d in Qj.eq)
        if not has_simplex_row:
            raise ValidationError("column set %d must contain the simplex equality" % (j + 1))
        keep[:, j] = Qj.upper > 0
    return cones, keep


def _transition_cone_set(spec: MarkovSpec, state_margin: float) -> LinearImage:
    n = spec.n
    cones, keep = _cone_support(spec)
    idx = np.flatnonzero(keep.ravel())  # row-major positions i*n + j
    nv = idx.size
    pos = {k: t for t, k in enumerate(idx)}
    ub_blocks, ub_rhs, eq_blocks = [], [], []
    for j, Qj in enumerate(cones):
        rows = np.flatnonzero(keep[:, j])
        cols = [pos[i * n + j] for i in rows]
        ub, eq = _homogenized_column(Qj, keep[:, j])
        if ub.size:
            full = np.zeros((ub.shape[0], nv))
            full[:, cols] = ub
            ub_blocks.append(full)
            ub_rhs.append(np.zeros(ub.shape[0]))
        if eq.size:
            full = np.zeros((eq.shape[0], nv))
            full[:, cols] = eq
            eq_blocks.append(full)
        if state_margin > 0:
            r = np.zeros((1, nv))
            r[0, cols] = -1.0
            ub_blocks.append(r)
            ub_rhs.append(np.array([-state_margin]))
    A_ub = np.vstack(ub_blocks) if ub_blocks else np.zeros((0, nv))
    b_ub = np.concatenate(ub_rhs) if ub_rhs else np.zeros(0)
    A_eq = np.vstack(eq_blocks + [np.ones((1, nv))])
    b_eq = np.zeros(A_eq.shape[0])
    b_eq[-1] = 1.0
    poly = PolytopeSpec(np.zeros(nv), np.ones(nv), A_ub, b_ub, A_eq, b_eq)
    if spec.A is None:
        return LinearImage(poly, np.eye(n * n)[:, idx])
    A = np.asarray(spec.A, dtype=float)
    if A.shape[1] != n * n:
        raise ValidationError("transition channel must have n^2 = %d columns" % (n * n))
    return LinearImage(poly, A[:, idx])


def _norm_ball_set(spec: MarkovSpec) -> LinearImage:
    n = spec.n
    Qk = np.linalg.matrix_power(np.asarray(spec.Q, dtype=float), spec.kappa)
    A = np.eye(n) if spec.A is None else np.asarray(spec.A, dtype=float)
    if A.shape[1] != n:
        raise ValidationError("state channel must have n = %d columns" % n)
    r = spec.kappa * spec.rho
    if r >= 2:
        raise ValidationError("kappa * rho must be < 2")
    if spec.rho == 0:
        return LinearImage(simplex(n), A @ Qk)
    # variables: alpha (n), v^1..v^n (n each), t^1..t^n (n each)
    nv = n + 2 * n * n
    def vi(j):
        return n + j * n + np.arange(n)
    def ti(j):
        return n + n * n + j * n + np.arange(n)
    ub_rows, eq_rows = [], []
    for j in range(n):
        c = Qk[:, j]
        for i in range(n):
            # v_i - alpha_j c_i - t_i <= 0 and -v_i + alpha_j c_i - t_i <= 0
            for sgn in (1.0, -1.0):
                row = np.zeros(nv)
                row[vi(j)[i]] = sgn
                row[j] = -sgn * c[i]
                row[ti(j)[i]] = -1.0
                ub_rows.append(row)
        row = np.zeros(nv)
        row[ti(j)] = 1.0
        row[j] = -r
        ub_rows.append(row)
        row = np.zeros(nv)
        row[vi(j)] = 1.0
        row[j] = -1.0
        eq_rows.append(row)
    row = np.zeros(nv)
    row[:n] = 1.0
    eq_rows.append(row)
    b_eq = np.zeros(len(eq_rows))
    b_eq[-1] = 1.0
    upper = np.concatenate([np.ones(n + n * n), 2.0 * np.ones(n * n)])
    poly = PolytopeSpec(np.zeros(nv), upper, np.array(ub_rows), np.zeros(len(ub_rows)),
                        np.array(eq_rows), b_eq)
    M = np.zeros((A.shape[0], nv))
    for j in range(n):
        M[:, vi(j)] = A
    return LinearImage(poly, M)


def markov_Z_sets(spec: MarkovSpec, variant: str = "norm-ball", state_margin: float = 0.0) -> LinearImage:
    """Set of observation distributions allowed by a chain hypothesis.

    ``variant="transition-cones"``: distributions of an observed transition
    (lifted variables are the joint probabilities P_ij of consecutive states).
    ``variant="norm-ball"``: distributions of an observed state after kappa
    steps (lifted variables alpha and v^j).
    ``state_margin`` bounds the previous-state probabilities away from zero
    in the transition model.
    """
    if variant == "transition-cones":
        return _transition_cone_set(spec, state_margin)
    if variant == "norm-ball":
        return _norm_ball_set(spec)
    raise ValidationError("unknown variant %r" % variant)


def common_support(Z1: LinearImage, Z2: LinearImage, tol: float = 0.0):
    """Drop observation outcomes that have probability zero under both sets.

    Returns the restricted images and the kept outcome indices.
    """
    if Z1.dim != Z2.dim:
        raise ValidationError("observation spaces differ")
    def live(Z):
        M = np.eye(Z.lifted_dim) if Z.matrix is None else Z.matrix
        return np.abs(M) @ np.abs(Z.poly.upper) > tol
    keep = live(Z1) | live(Z2)
    idx = np.flatnonzero(keep)
    def restrict(Z):
        M = np.eye(Z.lifted_dim) if Z.matrix is None else Z.matrix
        return LinearImage(Z.poly, M[idx])
    return restrict(Z1), restrict(Z2), idx


def markov_pair_problem(Z1: LinearImage, Z2: LinearImage, margin: float = 1e-12) -> PairProblem:
    """Single Discrete observation whose distribution lies in Z1 or in Z2."""
    return PairProblem(ProductScheme((DiscreteFactor(Z1.dim, margin=margin),)), Z1, Z2)


def transition_matrix_from_pairs(spec: MarkovSpec, z_lifted) -> np.ndarray:
    """Transition matrix S with Col_j[P] = x_j Col_j[S] for a lifted point of the
    transition-cone set of ``spec`` (columns with x_j = 0 fall back to Q)."""
    n = spec.n
    _, keep = _cone_support(spec)
    P = np.zeros(n * n)
    P[np.flatnonzero(keep.ravel())] = z_lifted
    P = P.reshape(n, n)
    x = P.sum(axis=0)
    S = np.array(spec.Q, dtype=float)
    nz = x > 0
    S[:, nz] = P[:, nz] / x[nz]
    return S
