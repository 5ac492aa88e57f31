"""Detecting a signal of unknown location under a nuisance: rate profiles of
the aggregated Gaussian and Poisson tests."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ValidationError
from ..sets import DomainTag, LinearImage, LPOracle, PolytopeSpec, box, check_set
from ..solver import FWConfig, gaussian_tail_inv, least_squares_polytope, maximize_concave

__all__ = [
    "DetectionSpec",
    "MinAffineDetector",
    "RateProfile",
    "sensor_rate_profile",
    "rate_factor",
    "convolution_matrix",
    "second_difference_set",
    "is_symmetric",
]


def rate_factor(eps: float, n: int = 1, case: str = "gaussian") -> float:
    """Non-optimality factor of the aggregated tests.

    ``case`` is ``gaussian``, ``poisson`` or ``functional`` (``n`` unused for the last).
    """
    if not 0 < eps < 0.25:
        raise ValidationError("eps must lie in (0, 1/4)")
    if n < 1:
        raise ValidationError("n must be >= 1")
    if case == "gaussian":
        return gaussian_tail_inv(eps / (4 * n)) / (2 * gaussian_tail_inv(eps / 2)) + 0.5
    if case == "poisson":
        return math.log(n / eps ** 2) / math.log(1 / (4 * eps))
    if case == "functional":
        return 2 * math.log(1 / eps) / math.log(1 / (4 * eps))
    raise ValidationError("unknown case %r" % case)


def is_symmetric(V: PolytopeSpec, tol: float = 1e-9) -> bool:
    """True when -V is contained in V (so V = -V)."""
    if not np.allclose(V.lower, -V.upper, atol=tol):
        return False
    if V.b_eq.size and np.any(np.abs(V.b_eq) > tol):
        return False
    if V.b_ub.size:
        orc = LPOracle(V)
        for a, b in zip(V.A_ub, V.b_ub):
            # max over V of a.(-x) is -(min over V of a.x)
            _, vmin = orc.minimize(a)
            if -vmin > b + tol * max(1.0, abs(b)):
                return False
    return True


@dataclass(frozen=True, eq=False)
class DetectionSpec:
    """Observation ``A(r e[i] + v) (+ noise)``; nuisance ``v`` in ``V``.

    ``signatures`` holds e[1..n] as columns. ``R`` caps the amplitude.
    """

    A: np.ndarray
    V: PolytopeSpec
    signatures: np.ndarray
    R: float
    eps: float
    sigma: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        S = np.asarray(self.signatures, dtype=float)
        if S.ndim == 1:
            S = S[:, None]
        if S.shape[0] != A.shape[1] or self.V.dim != A.shape[1]:
            raise ValidationError("A, signatures and nuisance set dimensions disagree")
        if not 0 < self.eps < 1:
            raise ValidationError("eps must lie in (0, 1)")
        if not self.R > 0 or not self.sigma > 0:
            raise ValidationError("R and sigma must be positive")
        AE = A @ S
        bad = np.nonzero(np.linalg.norm(AE, axis=0) <= 1e-14)[0]
        if bad.size:
            raise ValidationError("signature %d is invisible (A e = 0)" % (bad[0] + 1))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "signatures", S)

    @property
    def n(self) -> int:
        return self.signatures.shape[1]


@dataclass(frozen=True, eq=False)
class MinAffineDetector:
    """phi(w) = min_k (W_k . w - b_k) + offset; accept the null when phi >= 0."""

    W: np.ndarray
    b: np.ndarray
    offset: float = 0.0

    def __call__(self, obs):
        obs = np.asarray(obs, dtype=float)
        vals = obs @ self.W.T - self.b
        out = vals.min(axis=-1) + self.offset
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        return {"W": self.W.tolist(), "b": self.b.tolist(), "offset": self.offset}


@dataclass(frozen=True, eq=False)
class RateProfile:
    case: str
    rho: np.ndarray
    baseline: np.ndarray
    detector: MinAffineDetector
    points: tuple
    kappa: float

    def to_dict(self) -> dict:
        enc = lambda a: [None if not np.isfinite(v) else float(v) for v in a]
        return {"case": self.case, "rho": enc(self.rho), "baseline": enc(self.baseline),
                "kappa": self.kappa, "detector": self.detector.to_dict()}


def _gauss_objective(A, Ae):
    n = A.shape[1]

    def f(z):
        u, v, r = z[:n], z[n:2 * n], z[2 * n]
        d = A @ (u - v) - r * Ae
        gd = -2.0 * (A.T @ d)
        return -float(d @ d), np.concatenate([gd, -gd, [2.0 * float(Ae @ d)]])

    return f


def _poisson_objective(A, Ae):
    n = A.shape[1]

    def f(z):
        u, v, r = z[:n], z[n:2 * n], z[2 * n]
        x = A @ u
        y = A @ v + r * Ae
        sx, sy = np.sqrt(x), np.sqrt(y)
        val = -0.5 * float(np.sum((sx - sy) ** 2))
        gx = -0.5 * (1.0 - sy / sx)
        gy = -0.5 * (1.0 - sx / sy)
        return val, np.concatenate([A.T @ gx, A.T @ gy, [float(Ae @ gy)]])

    return f


def _max_rho(f, V, orcV, R, level, tol, cfg):
    """Largest rho in [0, R] with max_{u,v in V, r in [rho,R]} f >= level.

    Returns (rho, point at the first infeasible rho) or (inf, None) when even
    r = R stays feasible.
    """
    orcs = [orcV, orcV]

    def solve(rho):
        def stop(val, gap):
            return val >= level or val + gap < level
        res = maximize_concave(f, [V, V, box([rho], [R])], cfg, oracles=orcs + [LPOracle(box([rho], [R]))],
                               stop=stop)
        # undecided runs count as feasible when the bound allows it
        return res.value >= level or (res.value + res.gap >= level), res

    ok, res = solve(R)
    if ok:
        return math.inf, None
    lo, hi, hi_res = 0.0, R, res
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok, res = solve(mid)
        if ok:
            lo = mid
        else:
            hi, hi_res = mid, res
    return hi, hi_res


def _gauss_max_rho(A, Ae, V, R, level, tol):
    """Gaussian case in the variable w = u - v (u = w/2, v = -w/2 by symmetry).

    The inner problem min ||A w - r A e||^2 over w in 2V, r in [rho, R] is
    solved exactly; the solver gap decides borderline cases toward feasibility.
    """
    n = V.dim
    M = np.hstack([A, -Ae[:, None]])
    zero = np.zeros(M.shape[0])
    A_ub = np.hstack([V.A_ub, np.zeros((V.A_ub.shape[0], 1))])
    A_eq = np.hstack([V.A_eq, np.zeros((V.A_eq.shape[0], 1))])

    def solve(rho, x0):
        poly = PolytopeSpec(np.concatenate([2 * V.lower, [rho]]), np.concatenate([2 * V.upper, [R]]),
                            A_ub, 2 * V.b_ub, A_eq, 2 * V.b_eq)
        z0 = np.zeros(n + 1) if x0 is None else x0.copy()
        z0[-1] = max(z0[-1], rho)
        res = least_squares_polytope(M, zero, poly, x0=z0)
        return -res.value + res.gap >= level, res

    ok, res = solve(R, None)
    if ok:
        return math.inf, None
    lo, hi, hi_res = 0.0, R, res
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok, res = solve(mid, hi_res.point)
        if ok:
            lo = mid
        else:
            hi, hi_res = mid, res
    return hi, hi_res


def sensor_rate_profile(spec: DetectionSpec, case: str = "gaussian", cfg: Optional[FWConfig] = None,
                        tol: Optional[float] = None, margin: float = 1e-9) -> RateProfile:
    """Per-signature resolutions of the aggregated test and of the oracle test
    that knows the signature, plus the aggregated detector.

    Resolutions are bracketed by bisection to ``tol`` (default 1e-5 R) and the
    upper end is reported, so a test built there keeps its risk bound.
    """
    if case not in ("gaussian", "poisson"):
        raise ValidationError("case must be 'gaussian' or 'poisson'")
    cfg = cfg or FWConfig(max_iters=5000, gap_tol=1e-12)
    tol = 1e-5 * spec.R if tol is None else tol
    A, n, eps = spec.A, spec.n, spec.eps
    V = spec.V
    orcV = LPOracle(V) if case == "poisson" else None
    AE = A @ spec.signatures
    if case == "gaussian":
        if not is_symmetric(V):
            raise ValidationError("Gaussian case needs a nuisance set symmetric about 0")
        q1, q2 = gaussian_tail_inv(eps / (4 * n)), gaussian_tail_inv(eps / 2)
        thr = spec.sigma * (q1 + q2)
        thr0 = 2 * spec.sigma * q2
        level, level0 = -thr * thr, -thr0 * thr0
        lam = q2 / (q1 + q2)
    else:
        if np.any(A < 0) or np.any(A.sum(axis=1) <= 0) or np.any(spec.signatures < 0):
            raise ValidationError("Poisson case needs nonnegative A without zero rows and e >= 0")
        res = check_set(LinearImage(V, A), DomainTag("positive-orthant", margin))
        if res.status != "ok":
            raise ValidationError("nuisance intensities A V must stay positive (%s)" % res.status)
        level = -math.log(math.sqrt(n) / eps)
        level0 = -0.5 * math.log(1 / (4 * eps))
    rho = np.empty(n)
    base = np.empty(n)
    W, b, pts = [], [], []
    for i in range(n):
        Ae = AE[:, i]
        if case == "gaussian":
            rho[i], res = _gauss_max_rho(A, Ae, V, spec.R, level, tol)
            base[i], _ = _gauss_max_rho(A, Ae, V, spec.R, level0, tol)
        else:
            f = _poisson_objective(A, Ae)
            rho[i], res = _max_rho(f, V, orcV, spec.R, level, tol, cfg)
            base[i], _ = _max_rho(f, V, orcV, spec.R, level0, tol, cfg)
        if res is None:
            pts.append(None)
            continue
        d = V.dim
        if case == "gaussian":
            w, r = res.point[:d], float(res.point[d])
            u, v = 0.5 * w, -0.5 * w
        else:
            u, v, r = res.point[:d], res.point[d:2 * d], float(res.point[2 * d])
        x, y = A @ u, A @ (v + r * spec.signatures[:, i])
        pts.append((u, v, r))
        if case == "gaussian":
            dvec = x - y
            alpha = float(dvec @ (lam * x + (1 - lam) * y))
            W += [dvec, -dvec]
            b += [alpha, alpha]
        else:
            W.append(0.5 * np.log(x / y))
            b.append(0.5 * float(np.sum(x - y)))
    m = A.shape[0]
    W = np.asarray(W).reshape(-1, m)
    b = np.asarray(b, dtype=float)
    offset = 0.0 if case == "gaussian" else 0.5 * math.log(n)
    kappa = rate_factor(eps, n, case) if eps < 0.25 else float("nan")
    return RateProfile(case, rho, base, MinAffineDetector(W, b, offset), tuple(pts), kappa)


# ---------------------------------------------------------------------------
# convolution instances

def convolution_matrix(kernel, m: int) -> np.ndarray:
    """m x (m + T - 1) matrix of the causal filter with impulse response ``kernel``."""
    g = np.asarray(kernel, dtype=float)
    T = g.size
    A = np.zeros((m, m + T - 1))
    for t in range(m):
        A[t, t:t + T] = g[::-1]
    return A


def second_difference_set(n: int, L: float, bound: float) -> PolytopeSpec:
    """{u : |u_i - 2u_{i-1} + u_{i-2}| <= L, |u_i| <= bound}; symmetric about 0."""
    D = np.zeros((max(n - 2, 0), n))
    for k in range(n - 2):
        D[k, k:k + 3] = (1.0, -2.0, 1.0)
    A_ub = np.vstack([D, -D])
    b_ub = np.full(A_ub.shape[0], float(L))
    return PolytopeSpec(np.full(n, -float(bound)), np.full(n, float(bound)), A_ub, b_ub)
