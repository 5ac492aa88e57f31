"""Numerical kernels: Frank-Wolfe with away steps, Perron vectors, bisection,
normal tail functions and the matrix exponential."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .errors import NonFiniteObjective, ValidationError
from .sets import LPOracle, PolytopeSpec

__all__ = [
    "FWConfig",
    "OptResult",
    "maximize_concave",
    "spectral_norm_nonneg",
    "perron_positive",
    "bisect_max_param",
    "LSQResult",
    "least_squares_polytope",
    "gaussian_tail",
    "gaussian_tail_inv",
    "expm",
]


@dataclass(frozen=True)
class FWConfig:
    max_iters: int = 200_000
    gap_tol: float = 1e-7
    line_search: bool = True
    n_init_dirs: int = 6
    pairwise: bool = True
    # "fw" or "newton" (the latter needs a Hessian oracle, else FW is used)
    method: str = "newton"

    def __post_init__(self):
        if not self.gap_tol > 0:
            raise ValidationError("gap_tol must be positive")
        if self.method not in ("fw", "newton"):
            raise ValidationError("method must be 'fw' or 'newton'")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")


@dataclass
class OptResult:
    point: np.ndarray
    value: float
    gap: float
    iters: int
    converged: bool
    block_gaps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    history: Optional[list] = None


def _check_finite(val, grad):
    if not (np.isfinite(val) and np.all(np.isfinite(grad))):
        raise NonFiniteObjective("objective or gradient is not finite; check set margins")


def _line_search(f, z, d, gmax, val0, slope0):
    """Maximize the concave restriction t -> f(z + t d) on [0, gmax].

    Solves phi'(t) = 0 by Illinois false position on the analytic derivative,
    which is exact after one step when f is quadratic.
    """
    v1, g1 = f(z + gmax * d)
    _check_finite(v1, g1)
    s1 = float(g1 @ d)
    if s1 >= 0:
        return gmax, v1, g1
    a, fa = 0.0, slope0
    b, fb = gmax, s1
    side = 0
    best = (0.0, val0, None)
    for _ in range(80):
        t = b - fb * (b - a) / (fb - fa)
        if not (a < t < b):
            t = 0.5 * (a + b)
        vt, gt = f(z + t * d)
        _check_finite(vt, gt)
        st = float(gt @ d)
        if vt >= best[1]:
            best = (t, vt, gt)
        if abs(st) <= 1e-13 * abs(slope0) or (b - a) <= 1e-15 * gmax:
            # a stationary point counts even if roundoff hides the increase
            if best[2] is None and vt >= val0 - 1e-14 * max(1.0, abs(val0)):
                best = (t, vt, gt)
            break
        if st > 0:
            a, fa = t, st
            if side == 1:
                fb *= 0.5
            side = 1
        else:
            b, fb = t, st
            if side == -1:
                fa *= 0.5
            side = -1
    return best


def _initial_vertices(oracles, sizes, k):
    """Distinct vertices of each block from a deterministic set of directions."""
    rng = np.random.default_rng(12345)
    per_block = []
    for orc, n in zip(oracles, sizes):
        verts = []
        seen = set()
        dirs = [np.zeros(n)]
        for _ in range(k):
            c = rng.standard_normal(n)
            dirs += [c, -c]
        for c in dirs:
            v, _ = orc.minimize(c)
            key = v.tobytes()
            if key not in seen:
                seen.add(key)
                verts.append(v)
        per_block.append(verts)
    return per_block


class _ActiveSet:
    """Vertices with convex weights, stored row-wise for fast scoring."""

    def __init__(self, n: int, cap: int = 64):
        self.V = np.empty((cap, n))
        self.w = np.zeros(cap)
        self.m = 0
        self.keys = {}

    def add(self, v, wt, key=None):
        key = v.tobytes() if key is None else key
        i = self.keys.get(key)
        if i is not None:
            self.w[i] += wt
            return
        if self.m == len(self.w):
            self.V = np.vstack([self.V, np.empty_like(self.V)])
            self.w = np.concatenate([self.w, np.zeros_like(self.w)])
        self.V[self.m] = v
        self.w[self.m] = wt
        self.keys[key] = self.m
        self.m += 1

    def remove(self, i):
        last = self.m - 1
        del self.keys[self.V[i].tobytes()]
        if i != last:
            self.V[i] = self.V[last]
            self.w[i] = self.w[last]
            self.keys[self.V[i].tobytes()] = i
        self.w[last] = 0.0
        self.m = last

    def reset(self, v, key=None):
        self.m = 0
        self.keys = {}
        self.w[:] = 0.0
        self.add(v, 1.0, key)


def maximize_concave(
    f: Callable[[np.ndarray], tuple],
    sets: Sequence[PolytopeSpec],
    cfg: FWConfig = FWConfig(),
    oracles: Optional[Sequence[LPOracle]] = None,
    stop: Optional[Callable[[float, float], bool]] = None,
    record: bool = False,
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> OptResult:
    """Maximize a smooth concave ``f`` over a product of polytopes.

    ``f(z)`` returns ``(value, gradient)`` for the concatenated point ``z``.
    Away-step Frank-Wolfe; the reported gap is max_s grad.(s - z) over the
    product set at the returned point. ``stop(value, gap)`` may end the run
    early (used by bisection to stop once feasibility is decided).

    With ``cfg.method == "newton"`` and ``hess(z)`` returning the PSD matrix
    -f''(z), each step instead maximizes the local quadratic model exactly
    over the product set and line-searches towards it.
    """
    sets = list(sets)
    if oracles is None:
        oracles = [LPOracle(S) for S in sets]
    sizes = [S.dim for S in sets]
    cuts = np.cumsum([0] + sizes)
    nb = len(sets)

    blocks = _initial_vertices(oracles, sizes, cfg.n_init_dirs)
    k = max(len(b) for b in blocks)
    act = _ActiveSet(int(cuts[-1]))
    for j in range(k):
        act.add(np.concatenate([blocks[i][j % len(blocks[i])] for i in range(nb)]), 1.0)
    act.w[:act.m] /= act.w[:act.m].sum()
    z = act.w[:act.m] @ act.V[:act.m]

    val, g = f(z)
    _check_finite(val, g)
    if cfg.method == "newton" and hess is not None:
        return _newton(f, hess, sets, oracles, cuts, cfg, stop, record, z, val, g)
    hist = [] if record else None
    gap = np.inf
    bgaps = np.zeros(nb)
    stalls = 0
    it = 0
    converged = False
    for it in range(cfg.max_iters + 1):
        s = np.empty_like(z)
        for i in range(nb):
            sl = slice(cuts[i], cuts[i + 1])
            s[sl], _ = oracles[i].minimize(-g[sl])
            bgaps[i] = max(0.0, float(g[sl] @ (s[sl] - z[sl])))
        gap = float(bgaps.sum())
        if record:
            hist.append((val, gap))
        if gap <= cfg.gap_tol:
            converged = True
            break
        if stop is not None and stop(val, gap):
            break
        if it == cfg.max_iters or stalls > 50:
            break
        scores = act.V[:act.m] @ g
        a = int(np.argmin(scores))
        away_gap = float(g @ z - scores[a])
        skey = s.tobytes()
        sidx = act.keys.get(skey)
        if cfg.pairwise and act.m > 1 and sidx != a:
            d = s - act.V[a]
            gmax = act.w[a]
            slope = gap + away_gap
            mode = 0
        elif gap >= away_gap or act.m == 1:
            d = s - z
            gmax = 1.0
            slope = gap
            mode = 1
        else:
            wa = act.w[a]
            d = z - act.V[a]
            gmax = wa / (1.0 - wa)
            slope = away_gap
            mode = -1
        if cfg.line_search:
            t, nval, ng = _line_search(f, z, d, gmax, val, slope)
        else:
            t = min(gmax, 2.0 / (it + 2))
            nval, ng = f(z + t * d)
        if t <= 0 or ng is None:
            stalls += 1
            continue
        stalls = 0
        z = z + t * d
        val, g = nval, ng
        drop = t >= gmax * (1 - 1e-12)
        if mode == 0:
            act.w[a] -= t
            act.add(s, t, skey)
            if drop or act.w[a] <= 1e-15:
                act.remove(a)
        elif mode == 1:
            if t >= 1.0 - 1e-15:
                act.reset(s, skey)
            else:
                act.w[:act.m] *= 1.0 - t
                act.add(s, t, skey)
        else:
            act.w[:act.m] *= 1.0 + t
            act.w[a] -= t
            if drop or act.w[a] <= 1e-15:
                act.remove(a)
                act.w[:act.m] /= act.w[:act.m].sum()
    return OptResult(point=z, value=float(val), gap=float(gap), iters=it,
                     converged=converged, block_gaps=bgaps.copy(), history=hist)


class _BlockOracle:
    """LP oracle of a product set from the oracles of its factors."""

    def __init__(self, oracles, cuts):
        self.oracles = oracles
        self.cuts = cuts

    def minimize(self, c):
        x = np.empty(int(self.cuts[-1]))
        val = 0.0
        for i, orc in enumerate(self.oracles):
            sl = slice(self.cuts[i], self.cuts[i + 1])
            x[sl], v = orc.minimize(c[sl])
            val += v
        return x, val


def _block_gaps(g, z, orc):
    s, _ = orc.minimize(-g)
    out = np.empty(len(orc.oracles))
    for i in range(len(out)):
        sl = slice(orc.cuts[i], orc.cuts[i + 1])
        out[i] = max(0.0, float(g[sl] @ (s[sl] - z[sl])))
    return s, out


def _newton(f, hess, sets, oracles, cuts, cfg, stop, record, z, val, g):
    from .sets import product

    poly = product(*sets)
    orc = _BlockOracle(oracles, cuts)
    hist = [] if record else None
    mu_rel = 1e-8
    it = 0
    converged = False
    gap = np.inf
    bgaps = np.zeros(len(sets))
    for it in range(cfg.max_iters + 1):
        s, bgaps = _block_gaps(g, z, orc)
        gap = float(bgaps.sum())
        if record:
            hist.append((val, gap))
        if gap <= cfg.gap_tol:
            converged = True
            break
        if (stop is not None and stop(val, gap)) or it == cfg.max_iters:
            break
        H = hess(z)
        lam, U = np.linalg.eigh(0.5 * (H + H.T))
        lam = np.maximum(lam, 0.0)
        lam = lam + mu_rel * max(float(lam[-1]), 1e-300)
        root = np.sqrt(lam)
        # the model g.p - p.H.p / 2 as a least-squares distance in w = z + p
        M = root[:, None] * U.T
        b = M @ z + (U.T @ g) / root
        w = least_squares_polytope(M, b, poly, x0=z, oracle=orc, max_iters=20 * z.size + 100).point
        d = w - z
        slope = float(g @ d)
        if not slope > 1e-15 * max(gap, 1e-300):
            # model step useless (roundoff or too little curvature): Frank-Wolfe step
            d = s - z
            slope = gap
            mu_rel = min(mu_rel * 100.0, 1.0)
        t, nval, ng = _line_search(f, z, d, 1.0, val, slope)
        if t <= 0 or ng is None:
            mu_rel = min(mu_rel * 100.0, 1.0)
            if mu_rel >= 1.0:
                break
            continue
        # trust the model more after a full step, less after a short one
        mu_rel = max(mu_rel * 0.1, 1e-12) if t >= 0.999 else min(mu_rel * 10.0, 1.0)
        z = z + t * d
        val, g = nval, ng
    return OptResult(point=z, value=float(val), gap=float(gap), iters=it,
                     converged=converged, block_gaps=bgaps.copy(), history=hist)


# ---------------------------------------------------------------------------
# Perron-Frobenius

def spectral_norm_nonneg(E, tol=1e-13, max_iters=1_000_000):
    """Largest singular value of a nonnegative matrix and its singular vectors.

    Power iteration on E^T E from the all-ones vector; returns (sigma, g, h)
    with E h = sigma g and E^T g = sigma h, both unit-norm and nonnegative.
    """
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if np.any(E < 0):
        raise ValidationError("matrix must be entrywise nonnegative")
    if not np.any(E > 0):
        raise ValidationError("zero matrix: no aggregation possible")
    h = np.ones(E.shape[1]) / math.sqrt(E.shape[1])
    lam = 0.0
    for _ in range(max_iters):
        u = E @ h
        w = E.T @ u
        lam = float(h @ w)
        res = np.linalg.norm(w - lam * h)
        nw = np.linalg.norm(w)
        h = w / nw
        if res <= tol * lam:
            break
    sigma = math.sqrt(lam) if lam > 0 else 0.0
    u = E @ h
    sigma = float(np.linalg.norm(u))
    g = u / sigma
    h = E.T @ g
    h /= np.linalg.norm(h)
    return sigma, g, h


def perron_positive(Ebar, tol=1e-13, max_iters=1_000_000, irreducible=False):
    """Perron root and positive unit eigenvector of a nonnegative matrix with
    positive off-diagonal entries.

    With ``irreducible=True`` zero off-diagonal entries are allowed as long as
    the pattern graph is strongly connected.
    """
    Ebar = np.asarray(Ebar, dtype=float)
    n = Ebar.shape[0]
    if Ebar.ndim != 2 or Ebar.shape != (n, n) or n < 2:
        raise ValidationError("need a square matrix of size >= 2")
    off = Ebar[~np.eye(n, dtype=bool)]
    if np.any(Ebar < 0):
        raise ValidationError("matrix must be entrywise nonnegative")
    if irreducible:
        if not _strongly_connected(Ebar > 0):
            raise ValidationError("matrix is reducible")
    elif np.any(off <= 0):
        raise ValidationError("off-diagonal entries must be positive")
    # shift keeps the iteration aperiodic; Ebar + cI is primitive
    c = float(np.mean(Ebar.sum(axis=1)))
    B = Ebar + c * np.eye(n)
    g = np.ones(n) / math.sqrt(n)
    for _ in range(max_iters):
        w = B @ g
        w /= np.linalg.norm(w)
        Ew = Ebar @ w
        rho = float(w @ Ew)
        g = w
        if np.linalg.norm(Ew - rho * w) <= tol * rho:
            break
    rho = float(g @ (Ebar @ g))
    return rho, g


def _strongly_connected(adj) -> bool:
    adj = np.asarray(adj, dtype=bool)
    n = adj.shape[0]
    for A in (adj, adj.T):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.nonzero(A[i] & ~seen)[0]:
                seen[j] = True
                stack.append(int(j))
        if not seen.all():
            return False
    return True


@dataclass
class LSQResult:
    point: np.ndarray
    value: float
    gap: float
    iters: int
    converged: bool


def _null_space(C, n, tol=1e-12):
    if C.shape[0] == 0:
        return np.eye(n)
    _, sv, Vt = np.linalg.svd(C)
    rank = int(np.sum(sv > tol * max(1.0, sv[0] if sv.size else 0.0)))
    return Vt[rank:].T


def least_squares_polytope(M, b, poly: PolytopeSpec, x0=None, max_iters: int = 5000,
                           oracle: Optional[LPOracle] = None) -> LSQResult:
    """Minimize ||M z - b||^2 over a polytope by a primal active-set method.

    ``M`` may be rank deficient. ``x0`` must be feasible (a vertex from the LP
    oracle is used otherwise). The returned ``gap`` is the first-order bound
    max_s grad.(z - s), so the true minimum lies in [value - gap, value].
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    b = np.asarray(b, dtype=float)
    n = poly.dim
    orc = oracle or LPOracle(poly)
    if x0 is None:
        x0, _ = orc.minimize(np.zeros(n))
    z = np.clip(np.asarray(x0, dtype=float).copy(), poly.lower, poly.upper)
    # all inequalities as G z <= h: upper bounds, lower bounds, then general rows
    G = np.vstack([np.eye(n), -np.eye(n), poly.A_ub])
    h = np.concatenate([poly.upper, -poly.lower, poly.b_ub])
    Ceq = poly.A_eq
    scale = 1.0 + float(np.max(np.abs(h))) if h.size else 1.0
    ftol = 1e-10 * scale
    work = [i for i in range(G.shape[0]) if G[i] @ z >= h[i] - ftol]
    # keep a linearly independent working set
    work = _independent(G, work, Ceq)
    C = np.vstack([Ceq, G[work]])
    Z = _null_space(C, n)
    converged = False
    it = 0
    for it in range(max_iters):
        r0 = M @ z - b
        p = np.zeros(n)
        if Z.shape[1]:
            y = np.linalg.lstsq(M @ Z, -r0, rcond=None)[0]
            p = Z @ y
            # the reduced problem is linear in the null space of M: no descent there
            if float(np.linalg.norm(M @ p)) <= 1e-13 * (1.0 + float(np.linalg.norm(r0))):
                p = np.zeros(n)
        if np.linalg.norm(p) <= 1e-12 * (1.0 + np.linalg.norm(z)):
            grad = M.T @ r0
            if not work:
                converged = True
                break
            C = np.vstack([Ceq, G[work]])
            lam = np.linalg.lstsq(C.T, -grad, rcond=None)[0]
            lw = lam[Ceq.shape[0]:]
            k = int(np.argmin(lw))
            if lw[k] >= -1e-12 * (1.0 + float(np.linalg.norm(grad))):
                converged = True
                break
            row = G[work[k]]
            del work[k]
            # the dropped row's direction rejoins the null space
            rest = np.vstack([Ceq, G[work]])
            q = row - rest.T @ np.linalg.lstsq(rest.T, row, rcond=None)[0] if rest.shape[0] else row
            nq = float(np.linalg.norm(q))
            if nq > 1e-12:
                q = q / nq
                q = q - Z @ (Z.T @ q)
                Z = np.column_stack([Z, q / np.linalg.norm(q)])
            else:
                Z = _null_space(rest, n)
            continue
        Gp = G @ p
        slack = h - G @ z
        inwork = np.zeros(G.shape[0], dtype=bool)
        inwork[work] = True
        cand = np.nonzero((Gp > 1e-14 * (1.0 + np.abs(slack))) & ~inwork)[0]
        t, block = 1.0, None
        if cand.size:
            ts = np.maximum(slack[cand], 0.0) / Gp[cand]
            j = int(np.argmin(ts))
            if ts[j] < 1.0:
                t, block = float(ts[j]), int(cand[j])
        z = z + t * p
        if block is not None:
            u = Z.T @ G[block]
            if float(np.linalg.norm(u)) > 1e-10 * float(np.linalg.norm(G[block])):
                work.append(block)
                Z = _drop_direction(Z, u)
    z = np.clip(z, poly.lower, poly.upper)
    r0 = M @ z - b
    val = float(r0 @ r0)
    grad = 2.0 * (M.T @ r0)
    s, _ = orc.minimize(grad)
    gap = max(0.0, float(grad @ (z - s)))
    return LSQResult(z, val, gap, it, converged)


def _drop_direction(Z, u):
    """Orthonormal basis of {Z y : u.y = 0} via one Householder reflection."""
    v = u.copy()
    v[0] += math.copysign(float(np.linalg.norm(u)), u[0] if u[0] != 0 else 1.0)
    v /= np.linalg.norm(v)
    ZH = Z - np.outer(Z @ v, 2.0 * v)
    return ZH[:, 1:]


def _independent(G, idx, Ceq):
    """Greedy subset of rows ``idx`` of G independent of each other and of Ceq."""
    Q = np.zeros((0, G.shape[1]))
    for r in Ceq:
        Q = _extend_basis(Q, r)
    keep = []
    for i in idx:
        Q2 = _extend_basis(Q, G[i])
        if Q2.shape[0] > Q.shape[0]:
            Q = Q2
            keep.append(i)
    return keep


def _extend_basis(Q, r, tol=1e-10):
    # Gram-Schmidt with one reorthogonalization
    nr = float(np.linalg.norm(r))
    if nr == 0:
        return Q
    v = r / nr
    for _ in range(2):
        v = v - Q.T @ (Q @ v)
    nv = float(np.linalg.norm(v))
    if nv <= tol:
        return Q
    return np.vstack([Q, v / nv])


def bisect_max_param(feasible: Callable[[float], bool], r_lo: float, r_hi: float, tol: float) -> float:
    """Largest r in [r_lo, r_hi] (up to tol) for a monotone feasibility predicate."""
    if not tol > 0:
        raise ValidationError("tol must be positive")
    if not feasible(r_lo):
        raise ValidationError("predicate infeasible at the lower end")
    if feasible(r_hi):
        return r_hi
    lo, hi = r_lo, r_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# normal tail

def gaussian_tail(t):
    """Upper tail of the standard normal distribution, P(N(0,1) >= t)."""
    return special.ndtr(-np.asarray(t, dtype=float)) if np.ndim(t) else float(special.ndtr(-float(t)))


def gaussian_tail_inv(s):
    """Inverse of ``gaussian_tail`` on (0, 1)."""
    arr = np.asarray(s, dtype=float)
    if np.any((arr <= 0) | (arr >= 1)) or np.any(~np.isfinite(arr)):
        raise ValidationError("tail probability must lie in (0, 1)")
    out = -special.ndtri(arr)
    return out if np.ndim(s) else float(out)


# ---------------------------------------------------------------------------
# matrix exponential (scaling and squaring, Pade approximants)

_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
         960960.0, 16380.0, 182.0, 1.0),
}
_THETA = {3: 1.495585217958292e-2, 5: 2.539398330063230e-1, 7: 9.504178996162932e-1,
          9: 2.097847961257068e0, 13: 5.371920351148152e0}


def _pade_uv(A, m):
    b = _PADE[m]
    n = A.shape[0]
    I = np.eye(n)
    A2 = A @ A
    if m < 13:
        powers = [I, A2]
        for _ in range(2, m // 2 + 1):
            powers.append(powers[-1] @ A2)
        U = sum(b[2 * k + 1] * powers[k] for k in range(m // 2 + 1))
        V = sum(b[2 * k] * powers[k] for k in range(m // 2 + 1))
        return A @ U, V
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I
    return U, V


def expm(L):
    """Matrix exponential by scaling and squaring with Pade approximants."""
    A = np.atleast_2d(np.asarray(L, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValidationError("expm needs a square matrix")
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix entries must be finite")
    nrm = float(np.max(np.sum(np.abs(A), axis=0))) if A.size else 0.0
    for m in (3, 5, 7, 9):
        if nrm <= _THETA[m]:
            U, V = _pade_uv(A, m)
            return np.linalg.solve(V - U, V + U)
    s = max(0, int(math.ceil(math.log2(nrm / _THETA[13]))))
    U, V = _pade_uv(A / 2.0 ** s, 13)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R
