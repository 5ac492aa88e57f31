"""Pairwise tests: saddle-point solve, detector, certified risk and sample sizes."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleError, MarginViolation, ValidationError
from .schemes import Detector, ProductScheme, eval_detector
from .sets import DomainTag, LinearImage, LPOracle, as_image, check_set
from .solver import FWConfig, gaussian_tail, maximize_concave

__all__ = [
    "PairProblem",
    "PairSolution",
    "solve_pair",
    "shift_detector",
    "decide",
    "accepts_x",
    "repeated_plan",
    "near_opt_sample_size",
    "certified_risk",
    "ACCEPT_X",
    "ACCEPT_Y",
]

ACCEPT_X = "accept-X"
ACCEPT_Y = "accept-Y"


@dataclass(frozen=True, eq=False)
class PairProblem:
    """Two hypotheses ``x in X`` vs ``y in Y`` about the parameter of ``scheme``.

    ``X`` and ``Y`` live in the full parameter space (concatenation of factor
    parameters); they may be lifted sets given as ``LinearImage``.
    ``tags`` overrides the per-factor admissible domains.
    """

    scheme: ProductScheme
    X: object
    Y: object
    tags: Optional[Sequence[DomainTag]] = None

    def __post_init__(self):
        X, Y = as_image(self.X), as_image(self.Y)
        for name, S in (("X", X), ("Y", Y)):
            if S.dim != self.scheme.dim:
                raise ValidationError("%s has dimension %d, scheme expects %d" % (name, S.dim, self.scheme.dim))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        tags = tuple(self.tags) if self.tags is not None else tuple(f.tag for f in self.scheme.factors)
        if len(tags) != len(self.scheme.factors):
            raise ValidationError("one domain tag per factor required")
        object.__setattr__(self, "tags", tags)

    def swapped(self) -> "PairProblem":
        return PairProblem(self.scheme, self.Y, self.X, self.tags)

    def validate(self):
        """Raise if a set is empty or touches the boundary of a factor domain."""
        for name, S in (("X", self.X), ("Y", self.Y)):
            for k, (sl, tag) in enumerate(zip(self.scheme.slices(), self.tags)):
                M = np.eye(S.lifted_dim) if S.matrix is None else S.matrix
                off = None if S.offset is None else S.offset[sl]
                res = check_set(LinearImage(S.poly, M[sl], off), tag)
                if res.status == "empty":
                    raise InfeasibleError("hypothesis set %s is empty" % name)
                if res.status == "margin-violated":
                    raise MarginViolation(
                        "hypothesis set %s, factor %d violates the %s margin (coordinate %s)"
                        % (name, k + 1, tag.kind, res.coord), res.coord)


@dataclass(frozen=True, eq=False)
class PairSolution:
    scheme: ProductScheme
    x_star: np.ndarray
    y_star: np.ndarray
    opt: float
    eps_star: float
    detector: Detector
    gap: float
    gap_x: float
    gap_y: float
    certified_eps: float
    shift: float = 0.0
    eps_x: float = None
    eps_y: float = None
    converged: bool = True
    trivial: bool = False
    iters: int = 0
    lifted: Optional[tuple] = None

    def __post_init__(self):
        if self.eps_x is None:
            object.__setattr__(self, "eps_x", math.exp(self.shift) * self.eps_star)
        if self.eps_y is None:
            object.__setattr__(self, "eps_y", math.exp(-self.shift) * self.eps_star)

    @property
    def bounds(self):
        """Per-side risk bounds, capped at 1 (a bound of 1 is vacuous)."""
        return min(1.0, self.eps_x), min(1.0, self.eps_y)

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "y_star": self.y_star.tolist(),
            "opt": self.opt,
            "eps_star": self.eps_star,
            "gap": self.gap,
            "gap_x": self.gap_x,
            "gap_y": self.gap_y,
            "certified_eps": self.certified_eps,
            "shift": self.shift,
            "eps_x": self.eps_x,
            "eps_y": self.eps_y,
            "converged": self.converged,
            "trivial": self.trivial,
            "iters": self.iters,
            "detector": self.detector.to_dict(),
        }

    @classmethod
    def from_dict(cls, scheme: ProductScheme, d: dict) -> "PairSolution":
        return cls(
            scheme=scheme,
            x_star=np.asarray(d["x_star"], dtype=float),
            y_star=np.asarray(d["y_star"], dtype=float),
            opt=float(d["opt"]),
            eps_star=float(d["eps_star"]),
            detector=Detector.from_dict(scheme, d["detector"]),
            gap=float(d["gap"]),
            gap_x=float(d.get("gap_x", d["gap"])),
            gap_y=float(d.get("gap_y", d["gap"])),
            certified_eps=float(d["certified_eps"]),
            shift=float(d.get("shift", 0.0)),
            eps_x=d.get("eps_x"),
            eps_y=d.get("eps_y"),
            converged=bool(d.get("converged", True)),
            trivial=bool(d.get("trivial", False)),
            iters=int(d.get("iters", 0)),
        )


def _objective(problem: PairProblem):
    X, Y, scheme = problem.X, problem.Y, problem.scheme
    nx = X.lifted_dim

    def f(z):
        x = X.apply(z[:nx])
        y = Y.apply(z[nx:])
        val, gx, gy = scheme.psi_total(x, y)
        return val, np.concatenate([X.pullback(gx), Y.pullback(gy)])

    return f


def _neg_hessian(problem: PairProblem):
    X, Y, scheme = problem.X, problem.Y, problem.scheme
    nx = X.lifted_dim
    n = scheme.dim
    J = np.zeros((2 * n, nx + Y.lifted_dim))
    J[:n, :nx] = np.eye(nx) if X.matrix is None else X.matrix
    J[n:, nx:] = np.eye(Y.lifted_dim) if Y.matrix is None else Y.matrix

    def hess(z):
        H = scheme.neg_hessian_total(X.apply(z[:nx]), Y.apply(z[nx:]))
        return J.T @ H @ J

    return hess


def solve_pair(problem: PairProblem, cfg: FWConfig = FWConfig(), validate: bool = True,
               stop=None) -> PairSolution:
    """Maximize sum_k repeat_k psi_k(x_k, y_k) over X x Y and build the detector."""
    if validate:
        problem.validate()
    X, Y = problem.X, problem.Y
    try:
        oracles = [LPOracle(X.poly), LPOracle(Y.poly)]
    except InfeasibleError as exc:
        raise InfeasibleError("hypothesis set is empty: %s" % exc) from None
    res = maximize_concave(_objective(problem), [X.poly, Y.poly], cfg, oracles=oracles, stop=stop,
                           hess=_neg_hessian(problem))
    nx = X.lifted_dim
    x = X.apply(res.point[:nx])
    y = Y.apply(res.point[nx:])
    sol = _assemble(problem.scheme, x, y, res.value, res.gap, res.block_gaps[0], res.block_gaps[1],
                    res.converged, res.iters)
    return replace(sol, lifted=(res.point[:nx].copy(), res.point[nx:].copy()))


def _assemble(scheme, x, y, opt, gap, gap_x, gap_y, converged=True, iters=0) -> PairSolution:
    opt = min(float(opt), 0.0)
    parts = tuple(f.detector_part(xk, yk) for f, xk, yk in zip(scheme.factors, scheme.split(x), scheme.split(y)))
    det = Detector(scheme, parts, 0.0)
    eps = math.exp(opt / 2.0)
    sol = PairSolution(scheme=scheme, x_star=np.asarray(x, dtype=float), y_star=np.asarray(y, dtype=float),
                       opt=opt, eps_star=eps, detector=det, gap=float(gap), gap_x=float(gap_x),
                       gap_y=float(gap_y), certified_eps=eps, converged=converged,
                       trivial=eps >= 1.0 - 1e-9, iters=iters)
    return replace(sol, certified_eps=certified_risk(sol))


def solution_from_points(scheme: ProductScheme, x, y, gap: float = 0.0) -> PairSolution:
    """PairSolution for a given (not necessarily optimal) pair of points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    opt, _, _ = scheme.psi_total(x, y)
    return _assemble(scheme, x, y, opt, gap, gap, gap)


def certified_risk(s: PairSolution) -> float:
    """Risk bound for the detector built at the (approximate) solver point.

    Inflates the nominal value by the first-order residual so that the bound
    holds without assuming the optimization was exact.
    """
    kinds = {f.kind for f in s.scheme.factors}
    eps, gap = s.eps_star, s.gap
    if kinds == {"gaussian"}:
        d2 = 0.0
        for f, xk, yk in zip(s.scheme.factors, s.scheme.split(s.x_star), s.scheme.split(s.y_star)):
            w = f.whiten(xk - yk)
            d2 += f.repeat * float(w @ w)
        d = math.sqrt(d2)
        if d == 0.0:
            return 1.0
        return float(min(1.0, gaussian_tail(0.5 * d - 2.0 * gap / d)))
    if kinds == {"poisson"}:
        return float(min(1.0, math.exp(s.opt / 2.0 + gap)))
    if kinds == {"discrete"} and len(s.scheme.factors) == 1 and s.scheme.factors[0].repeat == 1:
        return float(min(1.0, eps * (1.0 + gap)))
    return float(min(1.0, eps * math.exp(max(s.gap_x, s.gap_y))))


def shift_detector(s: PairSolution, a: float) -> PairSolution:
    """Move the decision threshold; the two risks trade off as e^a and e^-a."""
    a = float(a)
    return replace(s, detector=s.detector.with_shift(a), shift=a,
                   eps_x=math.exp(a) * s.eps_star, eps_y=math.exp(-a) * s.eps_star)


def accepts_x(s: PairSolution, obs):
    """Boolean (array) of ``phi(obs) >= 0`` decisions."""
    return np.asarray(eval_detector(s.detector, obs)) >= 0.0


def decide(s: PairSolution, obs) -> str:
    return ACCEPT_X if eval_detector(s.detector, obs) >= 0.0 else ACCEPT_Y


def _ceil(v: float) -> int:
    r = round(v)
    return int(r) if abs(v - r) <= 1e-9 * max(1.0, abs(v)) else int(math.ceil(v))


def repeated_plan(eps_star: float, eps_target: float) -> Optional[int]:
    """Smallest K with eps_star**K <= eps_target; None when eps_star >= 1."""
    if not 0 < eps_target < 1 + 1e-15:
        raise ValidationError("target risk must lie in (0, 1]")
    if eps_star >= 1.0:
        return None
    if eps_star <= 0:
        return 1
    K = max(1, _ceil(math.log(eps_target) / math.log(eps_star)))
    while K > 1 and eps_star ** (K - 1) <= eps_target:
        K -= 1
    while eps_star ** K > eps_target:
        K += 1
    return K


def near_opt_sample_size(eps: float, Kbar: int) -> int:
    """Observations needed to match any test using Kbar observations at risk eps."""
    if not 0 < eps < 0.25:
        raise ValidationError("eps must lie in (0, 1/4)")
    return _ceil(2.0 * Kbar / (1.0 - 2.0 * math.log(2.0) / math.log(1.0 / eps)))
