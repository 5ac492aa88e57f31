"""Toy emission tomography: detector-pair geometry, smooth intensity classes
and the minimal observation time for testing a local average."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InfeasibleError, ValidationError
from ..pairtest import PairProblem, solve_pair
from ..schemes import AffinePart, Detector, PoissonFactor, ProductScheme
from ..sets import LinearImage, PolytopeSpec
from ..solver import FWConfig

__all__ = ["pet_geometry", "laplacian_class", "spot_functional", "PETPlan", "pet_plan"]


def pet_geometry(grid: int = 8, arcs: int = 16, rays: int = 10_000, seed: int = 0):
    """Bin-by-pixel probability matrix for a square field of view on [-1, 1]^2
    inside a ring of ``arcs`` equal detector arcs.

    Each pixel emits ``rays`` lines through uniform points with uniform
    directions; a line is counted by the unordered arc pair it hits. Pairs
    never hit are dropped. Returns (P, pairs) with P column-stochastic.
    """
    rng = np.random.default_rng(seed)
    R = math.sqrt(2.0)
    h = 2.0 / grid
    counts = {}
    cols = []
    for k in range(grid):
        for l in range(grid):
            px = -1.0 + h * (l + rng.random(rays))
            py = 1.0 - h * (k + rng.random(rays))
            th = math.pi * rng.random(rays)
            dx, dy = np.cos(th), np.sin(th)
            # intersections of p + s d with the circle of radius R
            b = px * dx + py * dy
            c = px * px + py * py - R * R
            disc = np.sqrt(b * b - c)
            ang = []
            for s in (-b - disc, -b + disc):
                ang.append(np.mod(np.arctan2(py + s * dy, px + s * dx), 2 * math.pi))
            ia = np.minimum((ang[0] / (2 * math.pi) * arcs).astype(int), arcs - 1)
            ib = np.minimum((ang[1] / (2 * math.pi) * arcs).astype(int), arcs - 1)
            lo, hi = np.minimum(ia, ib), np.maximum(ia, ib)
            code = lo * arcs + hi
            u, cnt = np.unique(code, return_counts=True)
            cols.append(dict(zip(u.tolist(), cnt.tolist())))
            for key in u.tolist():
                counts[key] = True
    keys = sorted(counts)
    row = {kk: i for i, kk in enumerate(keys)}
    P = np.zeros((len(keys), grid * grid))
    for j, col in enumerate(cols):
        for kk, c in col.items():
            P[row[kk], j] = c / rays
    pairs = [(kk // arcs + 1, kk % arcs + 1) for kk in keys]
    return P, pairs


def laplacian_class(grid: int, L: float, R: float, margin: float = 1e-3) -> PolytopeSpec:
    """Intensities on a grid x grid field with |discrete Laplacian| / 4 <= L,
    mean <= R and every pixel >= margin (outside cells count as 0)."""
    if not (L > 0 and R > 0 and 0 < margin < R):
        raise ValidationError("need L > 0 and 0 < margin < R")
    n = grid * grid
    rows = []
    for k in range(grid):
        for l in range(grid):
            a = np.zeros(n)
            a[k * grid + l] = 1.0
            for dk, dl in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                kk, ll = k + dk, l + dl
                if 0 <= kk < grid and 0 <= ll < grid:
                    a[kk * grid + ll] -= 0.25
            rows.append(a)
    Lap = np.array(rows)
    A_ub = np.vstack([Lap, -Lap, np.full((1, n), 1.0 / n)])
    b_ub = np.concatenate([np.full(2 * n, float(L)), [float(R)]])
    # a pixel can never exceed n R given the mean bound
    return PolytopeSpec(np.full(n, float(margin)), np.full(n, n * float(R)), A_ub, b_ub)


def spot_functional(grid: int, top: int, left: int, size: int = 3) -> np.ndarray:
    """Average over a size x size block with upper-left cell (top, left), 0-based."""
    g = np.zeros((grid, grid))
    g[top:top + size, left:left + size] = 1.0 / (size * size)
    return g.ravel()


@dataclass(frozen=True, eq=False)
class PETPlan:
    t_star: float
    H: float
    lam1: np.ndarray
    lam2: np.ndarray
    detector: Detector
    gap: float
    P: np.ndarray

    def detector_at(self, t: float) -> Detector:
        """Detector for observation time t (counts have mean t P lambda)."""
        return _detector(self.detector.scheme, self.P, self.lam1, self.lam2, t)

    def to_dict(self) -> dict:
        return {"t_star": self.t_star, "H": self.H, "gap": self.gap,
                "lam1": self.lam1.tolist(), "lam2": self.lam2.tolist(),
                "detector": self.detector.to_dict()}


def _detector(scheme, P, lam1, lam2, t):
    x, y = P @ lam1, P @ lam2
    part = AffinePart(0.5 * np.log(x / y), 0.5 * t * float(np.sum(x - y)))
    return Detector(scheme, (part,), 0.0)


def pet_plan(P, Lam: PolytopeSpec, g, alpha: float, rho: float, eps: float,
             cfg: FWConfig = FWConfig(max_iters=20000, gap_tol=1e-9), h_tol: float = 1e-12) -> PETPlan:
    """Smallest observation time t* = 2 ln(1/eps) / H with
    H = min sum_i (sqrt([P l]_i) - sqrt([P l']_i))^2 over l in Lam, g.l <= alpha
    and l' in Lam, g.l' >= alpha + rho."""
    P = np.asarray(P, dtype=float)
    g = np.asarray(g, dtype=float)
    if not 0 < eps < 1 or not rho > 0:
        raise ValidationError("need 0 < eps < 1 and rho > 0")
    if np.linalg.norm(P @ g) <= 1e-14:
        raise ValidationError("functional is invisible to the scanner (g in Ker P)")
    if np.any(P.sum(axis=1) <= 0):
        raise ValidationError("every bin must see some pixel")
    L1 = Lam.with_ineq(g[None, :], [alpha])
    L2 = Lam.with_ineq(-g[None, :], [-(alpha + rho)])
    scheme = ProductScheme((PoissonFactor(P.shape[0]),))
    prob = PairProblem(scheme, LinearImage(L1, P), LinearImage(L2, P))
    try:
        sol = solve_pair(prob, cfg, validate=False)
    except InfeasibleError as exc:
        raise InfeasibleError("a hypothesis class is empty: %s" % exc) from None
    # the pair objective is -H, so its value and gap bound H from both sides
    H = -sol.opt
    if H <= h_tol:
        raise InfeasibleError("indistinguishable: H = %.3g" % H)
    t_star = 2.0 * math.log(1.0 / eps) / H
    lam1, lam2 = sol.lifted
    return PETPlan(t_star, H, lam1, lam2, _detector(scheme, P, lam1, lam2, t_star), sol.gap, P)
