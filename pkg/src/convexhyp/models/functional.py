"""Testing a linear functional of a discrete distribution seen through noisy
channels: resolution by bisection and the discretized channel matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import InfeasibleError, ValidationError
from ..pairtest import PairProblem, PairSolution, solve_pair
from ..schemes import DiscreteFactor, ProductScheme
from ..sets import LinearImage, LPOracle, PolytopeSpec, simplex
from ..solver import FWConfig
from .sensor import rate_factor

__all__ = [
    "FunctionalSpec",
    "Resolution",
    "functional_resolution",
    "functional_pair",
    "rho_max",
    "PointMass",
    "deconvolution_channel",
    "trimmed_channel",
    "signal_grid",
]


@dataclass(frozen=True, eq=False)
class FunctionalSpec:
    """H1: g.x <= alpha - rho vs H2: g.x >= alpha + rho, x in X (a subset of the simplex).

    Observer l sees K[l] draws from A[l] x. ``margin`` keeps A[l] x away from 0.
    """

    channels: tuple
    K: tuple
    g: np.ndarray
    alpha: float
    X: Optional[PolytopeSpec] = None
    margin: float = 1e-9

    def __post_init__(self):
        chans = tuple(np.atleast_2d(np.asarray(A, dtype=float)) for A in self.channels)
        if not chans:
            raise ValidationError("need at least one channel")
        n = chans[0].shape[1]
        for A in chans:
            if A.shape[1] != n:
                raise ValidationError("all channels must act on the same simplex")
            if np.any(A < 0) or np.any(np.abs(A.sum(axis=0) - 1) > 1e-10):
                raise ValidationError("channels must be column-stochastic")
        K = tuple(int(k) for k in self.K)
        if len(K) != len(chans) or any(k < 1 for k in K):
            raise ValidationError("one positive repetition count per channel")
        g = np.asarray(self.g, dtype=float)
        if g.shape != (n,):
            raise ValidationError("functional must have length %d" % n)
        X = simplex(n) if self.X is None else self.X
        if X.dim != n:
            raise ValidationError("X must live in dimension %d" % n)
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.channels[0].shape[1]

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack(self.channels)

    def scheme(self) -> ProductScheme:
        return ProductScheme(tuple(DiscreteFactor(A.shape[0], k, self.margin)
                                   for A, k in zip(self.channels, self.K)))


def rho_max(spec: FunctionalSpec) -> float:
    """Largest rho for which both hypotheses are nonempty (two LPs)."""
    orc = LPOracle(_with_positivity(spec, spec.X))
    _, gmin = orc.minimize(spec.g)
    _, gneg = orc.minimize(-spec.g)
    return min(spec.alpha - gmin, -gneg - spec.alpha)


def _with_positivity(spec, P):
    # A x >= margin for every channel row that is not identically zero
    B = spec.stacked
    rows = B[np.any(B > 0, axis=1)]
    return P.with_ineq(-rows, np.full(rows.shape[0], -spec.margin))


def _sides(spec: FunctionalSpec, rho: float):
    base = _with_positivity(spec, spec.X)
    X = base.with_ineq(spec.g[None, :], [spec.alpha - rho])
    Y = base.with_ineq(-spec.g[None, :], [-(spec.alpha + rho)])
    return X, Y


def functional_pair(spec: FunctionalSpec, rho: float, cfg: FWConfig = FWConfig(), stop=None) -> PairSolution:
    """Solve the pair problem at a fixed rho; ``eps_star`` is exp(Opt[rho])."""
    X, Y = _sides(spec, rho)
    B = spec.stacked
    prob = PairProblem(spec.scheme(), LinearImage(X, B), LinearImage(Y, B))
    return solve_pair(prob, cfg, validate=False, stop=stop)


@dataclass(frozen=True, eq=False)
class Resolution:
    rho: float
    rho_max: float
    solution: PairSolution
    theta: Optional[float]
    degenerate: bool

    def to_dict(self) -> dict:
        return {"rho": self.rho, "rho_max": self.rho_max, "theta": self.theta,
                "degenerate": self.degenerate, "solution": self.solution.to_dict()}


def functional_resolution(spec: FunctionalSpec, eps: float, cfg: FWConfig = FWConfig(),
                          tol: Optional[float] = None) -> Resolution:
    """Smallest rho at which the test built from the pair problem has risk <= eps.

    Bisection on rho; a midpoint counts as distinguishable-at-eps when the
    pair optimum stays >= eps (decided early from the solver bounds).
    """
    if not 0 < eps < 1:
        raise ValidationError("eps must lie in (0, 1)")
    rmax = rho_max(spec)
    if not rmax > 0:
        raise InfeasibleError("hypotheses cannot both be nonempty (rho_max = %.3g)" % rmax)
    tol = 1e-7 * rmax if tol is None else tol
    level = 2.0 * math.log(eps)  # on the scale of the pair objective

    def feasible(rho):
        def stop(val, gap):
            return val >= level or val + gap < level
        sol = functional_pair(spec, rho, cfg, stop=stop)
        return sol.opt >= level or sol.opt + sol.gap >= level

    theta = rate_factor(eps, 1, "functional") if eps < 0.25 else None
    if feasible(rmax):
        sol = functional_pair(spec, rmax, cfg)
        return Resolution(rmax, rmax, sol, theta, True)
    lo, hi = 0.0, rmax
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    sol = functional_pair(spec, hi, cfg)
    return Resolution(hi, rmax, sol, theta, False)


# ---------------------------------------------------------------------------
# channels

class PointMass:
    """Degenerate noise at ``c`` with the cdf/ppf interface of scipy distributions."""

    def __init__(self, c: float = 0.0):
        self.c = float(c)

    def cdf(self, t):
        return (np.asarray(t, dtype=float) >= self.c).astype(float)

    def ppf(self, p):
        return np.full(np.shape(p), self.c) if np.ndim(p) else self.c


def signal_grid(n: int, lo: float = -1.0, hi: float = 1.0):
    """Edges a_0..a_n of n equal bins and their midpoints."""
    a = np.linspace(lo, hi, n + 1)
    return a, 0.5 * (a[:-1] + a[1:])


def _finish(A, drop_empty):
    if drop_empty:
        keep = np.any(A > 0, axis=1)
        A = A[keep]
    if A.shape[0] == 0:
        raise ValidationError("empty-bin configuration: no observation bin carries mass")
    s = A.sum(axis=0)
    if np.any(np.abs(s - 1) > 1e-10):
        raise ValidationError("channel columns do not sum to 1")
    return A


def deconvolution_channel(noise, signal_edges, obs_edges: Optional[Sequence[float]] = None,
                          n_interior: Optional[int] = None, delta: Optional[float] = None,
                          drop_empty: bool = True) -> np.ndarray:
    """A_ij = P(mid_j + noise in J_i) for observation bins J_i.

    Either give the finite interior ``obs_edges`` b_1 < ... < b_{m-1} (outer
    edges are -inf and +inf), or give ``n_interior`` and ``delta``: then
    b_1 = a_0 + q(delta), b_{m-1} = a_n + q(1 - delta) with ``n_interior``
    equal bins between them (q = noise quantile).
    """
    a = np.asarray(signal_edges, dtype=float)
    if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
        raise ValidationError("signal bins must be strictly increasing")
    mids = 0.5 * (a[:-1] + a[1:])
    if obs_edges is None:
        if n_interior is None or delta is None or not 0 < delta < 0.5 or n_interior < 1:
            raise ValidationError("give obs_edges, or n_interior >= 1 and delta in (0, 1/2)")
        b1 = a[0] + float(noise.ppf(delta))
        b2 = a[-1] + float(noise.ppf(1 - delta))
        b = np.linspace(b1, b2, n_interior + 1)
    else:
        b = np.asarray(obs_edges, dtype=float)
    if b.ndim != 1 or b.size < 1 or np.any(np.diff(b) <= 0):
        raise ValidationError("empty-bin configuration: observation edges must be strictly increasing")
    edges = np.concatenate([[-np.inf], b, [np.inf]])
    F = np.asarray(noise.cdf(edges[:, None] - mids[None, :]), dtype=float)
    F[0] = 0.0
    F[-1] = 1.0
    A = np.diff(F, axis=0)
    A[A < 0] = 0.0
    A /= A.sum(axis=0, keepdims=True)
    return _finish(A, drop_empty)


def trimmed_channel(noise, signal_edges, drop_empty: bool = True) -> np.ndarray:
    """Observation max(xi, noise) binned on the signal bins plus (a_n, inf).

    A_jj = P(noise <= a_j), A_ij = P(noise in I_i) for i > j.
    """
    a = np.asarray(signal_edges, dtype=float)
    if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
        raise ValidationError("signal bins must be strictly increasing")
    n = a.size - 1
    Fa = np.asarray(noise.cdf(a), dtype=float)
    # P(noise in I_i) for I_1..I_n and the tail bin (a_n, inf)
    pin = np.concatenate([np.diff(Fa), [1.0 - Fa[-1]]])
    A = np.zeros((n + 1, n))
    for j in range(n):
        A[j, j] = Fa[j + 1]
        A[j + 1:, j] = pin[j + 1:]
    return _finish(A, drop_empty)
