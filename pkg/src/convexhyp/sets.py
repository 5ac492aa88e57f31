"""Polyhedral parameter sets and a dense bounded-variable simplex oracle.

Every hypothesis set in the package is a compact polytope

    {x : lower <= x <= upper, A_ub x <= b_ub, A_eq x = b_eq}

optionally pushed through a linear map (``LinearImage``) so that lifted
representations (transition matrices, nuisance decompositions, channel
outputs) can be handled by the same linear-minimization oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleError, ValidationError

FEAS_TOL = 1e-9

__all__ = [
    "PolytopeSpec",
    "LinearImage",
    "DomainTag",
    "CheckResult",
    "LPOracle",
    "lp_minimize",
    "check_set",
    "require_valid",
    "as_image",
    "box",
    "simplex",
    "singleton",
    "product",
]


def _frozen(a, shape=None):
    arr = np.array(a, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PolytopeSpec:
    """Box, inequality and equality description of a compact polytope.

    Arrays are copied and made read-only, so instances can be shared freely.
    """

    lower: np.ndarray
    upper: np.ndarray
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None

    def __post_init__(self):
        lo = np.atleast_1d(np.array(self.lower, dtype=float)).ravel()
        up = np.atleast_1d(np.array(self.upper, dtype=float)).ravel()
        n = lo.size
        if n == 0 or up.size != n:
            raise ValidationError("lower/upper must be nonempty and of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(up))):
            raise ValidationError("box bounds must be finite")
        if np.any(lo > up):
            raise ValidationError("lower > upper in coordinate %d" % int(np.argmax(lo > up)))
        A_ub = np.zeros((0, n)) if self.A_ub is None else np.atleast_2d(np.array(self.A_ub, dtype=float))
        b_ub = np.zeros(0) if self.b_ub is None else np.atleast_1d(np.array(self.b_ub, dtype=float)).ravel()
        A_eq = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.array(self.A_eq, dtype=float))
        b_eq = np.zeros(0) if self.b_eq is None else np.atleast_1d(np.array(self.b_eq, dtype=float)).ravel()
        if A_ub.size == 0:
            A_ub = np.zeros((0, n))
        if A_eq.size == 0:
            A_eq = np.zeros((0, n))
        if A_ub.shape != (b_ub.size, n) or A_eq.shape != (b_eq.size, n):
            raise ValidationError("constraint matrix shapes do not match dimension %d" % n)
        for arr in (A_ub, b_ub, A_eq, b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValidationError("constraint data must be finite")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(up))
        object.__setattr__(self, "A_ub", _frozen(A_ub))
        object.__setattr__(self, "b_ub", _frozen(b_ub))
        object.__setattr__(self, "A_eq", _frozen(A_eq))
        object.__setattr__(self, "b_eq", _frozen(b_eq))

    @property
    def dim(self) -> int:
        return self.lower.size

    @classmethod
    def from_constraints(cls, lower, upper, ineq=(), eq=()):
        """Build from lists of ``(a, b)`` pairs meaning ``a.x <= b`` / ``a.x == b``."""
        n = np.size(lower)
        A_ub = np.array([np.ravel(a) for a, _ in ineq], dtype=float).reshape(-1, n)
        b_ub = np.array([b for _, b in ineq], dtype=float)
        A_eq = np.array([np.ravel(c) for c, _ in eq], dtype=float).reshape(-1, n)
        b_eq = np.array([d for _, d in eq], dtype=float)
        return cls(lower, upper, A_ub, b_ub, A_eq, b_eq)

    @property
    def ineq(self):
        return list(zip(self.A_ub, self.b_ub))

    @property
    def eq(self):
        return list(zip(self.A_eq, self.b_eq))

    def with_ineq(self, a, b) -> "PolytopeSpec":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return PolytopeSpec(self.lower, self.upper, np.vstack([self.A_ub, a]),
                            np.concatenate([self.b_ub, b]), self.A_eq, self.b_eq)

    def with_eq(self, c, d) -> "PolytopeSpec":
        c = np.atleast_2d(np.asarray(c, dtype=float))
        d = np.atleast_1d(np.asarray(d, dtype=float))
        return PolytopeSpec(self.lower, self.upper, self.A_ub, self.b_ub,
                            np.vstack([self.A_eq, c]), np.concatenate([self.b_eq, d]))

    def violation(self, x) -> float:
        """Largest constraint violation at ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        v = [0.0, np.max(self.lower - x), np.max(x - self.upper)]
        if self.b_ub.size:
            v.append(np.max(self.A_ub @ x - self.b_ub))
        if self.b_eq.size:
            v.append(np.max(np.abs(self.A_eq @ x - self.b_eq)))
        return float(max(v))

    def to_dict(self) -> dict:
        d = {"dim": self.dim, "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        if self.b_ub.size:
            d["ineq"] = [{"a": a.tolist(), "b": float(b)} for a, b in self.ineq]
        if self.b_eq.size:
            d["eq"] = [{"a": a.tolist(), "b": float(b)} for a, b in self.eq]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PolytopeSpec":
        n = int(d["dim"])
        lower = d.get("lower", [0.0] * n)
        upper = d.get("upper", [1.0] * n)
        if np.size(lower) != n or np.size(upper) != n:
            raise ValidationError("bounds must have length dim=%d" % n)
        ineq = [(r["a"], r["b"]) for r in d.get("ineq", [])]
        eq = [(r["a"], r["b"]) for r in d.get("eq", [])]
        for a, _ in ineq + eq:
            if np.size(a) != n:
                raise ValidationError("constraint row of length %d in a set of dim %d" % (np.size(a), n))
        return cls.from_constraints(lower, upper, ineq, eq)


@dataclass(frozen=True, eq=False)
class LinearImage:
    """The set ``{matrix @ z + offset : z in poly}``.

    ``matrix=None`` means the identity, i.e. the polytope itself.
    """

    poly: PolytopeSpec
    matrix: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.matrix is not None:
            M = np.atleast_2d(np.array(self.matrix, dtype=float))
            if M.shape[1] != self.poly.dim:
                raise ValidationError("map has %d columns, polytope has dim %d" % (M.shape[1], self.poly.dim))
            object.__setattr__(self, "matrix", _frozen(M))
        if self.offset is not None:
            off = np.array(self.offset, dtype=float).ravel()
            if off.size != self.dim:
                raise ValidationError("offset length mismatch")
            object.__setattr__(self, "offset", _frozen(off))

    @property
    def dim(self) -> int:
        return self.poly.dim if self.matrix is None else self.matrix.shape[0]

    @property
    def lifted_dim(self) -> int:
        return self.poly.dim

    def apply(self, z):
        x = z if self.matrix is None else self.matrix @ z
        if self.offset is not None:
            x = x + self.offset
        return x

    def pullback(self, g):
        """Transpose action: gradient in image coordinates -> lifted coordinates."""
        return g if self.matrix is None else self.matrix.T @ g

    def to_dict(self) -> dict:
        d = self.poly.to_dict()
        if self.matrix is not None:
            d["map"] = self.matrix.tolist()
        if self.offset is not None:
            d["offset"] = self.offset.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LinearImage":
        return cls(PolytopeSpec.from_dict(d), d.get("map"), d.get("offset"))


def as_image(S) -> LinearImage:
    if isinstance(S, LinearImage):
        return S
    if isinstance(S, PolytopeSpec):
        return LinearImage(S)
    raise ValidationError("expected PolytopeSpec or LinearImage, got %r" % type(S).__name__)


@dataclass(frozen=True)
class DomainTag:
    """Admissible domain of a parameter block.

    kind is ``"unrestricted"``, ``"positive-orthant"`` or ``"simplex-interior"``.
    """

    kind: str = "unrestricted"
    margin: float = 0.0

    def __post_init__(self):
        if self.kind not in ("unrestricted", "positive-orthant", "simplex-interior"):
            raise ValidationError("unknown domain kind %r" % self.kind)
        if self.kind != "unrestricted" and not self.margin > 0:
            raise ValidationError("domain margin must be strictly positive")


@dataclass(frozen=True)
class CheckResult:
    status: str  # "ok" | "empty" | "margin-violated"
    coord: Optional[int] = None  # 1-based coordinate for margin violations

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# ---------------------------------------------------------------------------
# simplex

def _reduce_equalities(A, b, tol=1e-11):
    """Row-echelon reduction of ``A x = b`` with partial pivoting.

    Returns an equivalent full-row-rank system; raises InfeasibleError on an
    inconsistent row.
    """
    if A.shape[0] == 0:
        return A.copy(), b.copy()
    M = np.hstack([A, b[:, None]]).astype(float)
    scale = np.max(np.abs(M[:, :-1]), axis=1)
    scale[scale == 0] = 1.0
    M /= scale[:, None]
    m, n = A.shape
    row = 0
    for col in range(n):
        if row == m:
            break
        piv = row + int(np.argmax(np.abs(M[row:, col])))
        if abs(M[piv, col]) <= tol:
            continue
        if piv != row:
            M[[row, piv]] = M[[piv, row]]
        M[row] /= M[row, col]
        below = M[row + 1:, col].copy()
        M[row + 1:] -= np.outer(below, M[row])
        row += 1
    rest = M[row:]
    if rest.size and np.max(np.abs(rest[:, -1])) > 1e-9:
        raise InfeasibleError("inconsistent equality constraints")
    return M[:row, :-1], M[:row, -1]


class LPOracle:
    """Reusable simplex workspace for minimizing linear costs over one polytope.

    Phase 1 runs once at construction; each ``minimize`` call restarts phase 2
    from the last optimal basis, which makes repeated calls with nearby cost
    vectors (as in Frank-Wolfe) cheap.
    """

    REFACTOR_EVERY = 100
    BLAND_AFTER = 30

    def __init__(self, poly: PolytopeSpec, tol: float = FEAS_TOL):
        self.poly = poly
        self.tol = tol
        n = poly.dim
        self.n = n
        lo, up = poly.lower, poly.upper
        self._box_only = poly.b_ub.size == 0 and poly.b_eq.size == 0
        if self._box_only:
            return
        w = up - lo
        A_ub = np.array(poly.A_ub)
        b_ub = poly.b_ub - A_ub @ lo
        A_eq, b_eq = _reduce_equalities(np.array(poly.A_eq), poly.b_eq - poly.A_eq @ lo)
        # scale inequality rows to unit max-norm for conditioning
        s = np.max(np.abs(A_ub), axis=1) if A_ub.size else np.zeros(0)
        empty_rows = s == 0
        if np.any(b_ub[empty_rows] < -tol):
            raise InfeasibleError("constraint 0 <= b violated")
        keep = ~empty_rows
        A_ub, b_ub, s = A_ub[keep], b_ub[keep], s[keep]
        A_ub = A_ub / s[:, None]
        b_ub = b_ub / s
        p, q = b_ub.size, b_eq.size
        m = p + q
        A = np.zeros((m, n + p))
        A[:p, :n] = A_ub
        A[:p, n:] = np.eye(p)
        A[p:, :n] = A_eq
        b = np.concatenate([b_ub, b_eq])
        neg = b < 0
        A[neg] *= -1.0
        b[neg] *= -1.0
        need_art = [i for i in range(m) if i >= p or neg[i]]
        n_art = len(need_art)
        N = n + p + n_art
        Afull = np.zeros((m, N))
        Afull[:, : n + p] = A
        basis = np.empty(m, dtype=int)
        for i in range(p):
            basis[i] = n + i
        for k, i in enumerate(need_art):
            Afull[i, n + p + k] = 1.0
            basis[i] = n + p + k
        ub = np.concatenate([w, np.full(p, np.inf), np.full(n_art, np.inf)])
        self.m, self.N = m, N
        self.Afull, self.b = Afull, b
        self.ub = ub
        self.basis = basis
        self.at_upper = np.zeros(N, dtype=bool)
        self.is_basic = np.zeros(N, dtype=bool)
        self.is_basic[basis] = True
        self.T = Afull.copy()  # initial basis matrix is the identity
        self.xB = b.copy()
        self._pivots = 0
        self.n_art = n_art
        if n_art:
            cost = np.zeros(N)
            cost[n + p:] = 1.0
            self._run(cost)
            infeas = float(np.sum(self._values()[n + p:]))
            if infeas > tol * max(1.0, float(np.max(np.abs(b))) if b.size else 1.0):
                raise InfeasibleError("polytope is empty (phase-1 residual %.3e)" % infeas)
            self._drive_out_artificials(n + p)
            self.ub[n + p:] = 0.0

    # -- internals ---------------------------------------------------------
    def _values(self):
        x = np.where(self.at_upper, self.ub, 0.0)
        x[~np.isfinite(x)] = 0.0
        x[self.basis] = self.xB
        return x

    def _refactor(self):
        B = self.Afull[:, self.basis]
        self.T = np.linalg.solve(B, self.Afull)
        nb_up = self.at_upper & ~self.is_basic
        rhs = self.b - self.Afull[:, nb_up] @ self.ub[nb_up]
        self.xB = np.linalg.solve(B, rhs)
        self._pivots = 0

    def _pivot(self, r, j):
        T = self.T
        piv = T[r, j]
        T[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, j] = 0.0
        T[r, j] = 1.0
        leaving = self.basis[r]
        self.is_basic[leaving] = False
        self.basis[r] = j
        self.is_basic[j] = True
        self._pivots += 1

    def _drive_out_artificials(self, first_art):
        for r in range(self.m):
            if self.basis[r] < first_art:
                continue
            row = np.abs(self.T[r, :first_art])
            row[self.is_basic[:first_art]] = 0.0
            j = int(np.argmax(row)) if row.size else -1
            if j < 0 or row[j] <= 1e-9:
                continue  # redundant row, artificial stays basic at level 0
            val = self.ub[j] if self.at_upper[j] else 0.0
            leaving = self.basis[r]
            self._pivot(r, j)
            self.at_upper[j] = False
            self.at_upper[leaving] = False
            self.xB[r] = val

    def _run(self, cost, max_pivots=100000):
        T, tol = self.T, self.tol
        cscale = max(1.0, float(np.max(np.abs(cost))))
        dtol = 1e-11 * cscale
        streak = 0
        for _ in range(max_pivots):
            if self._pivots >= self.REFACTOR_EVERY:
                self._refactor()
            T = self.T
            d = cost - cost[self.basis] @ T
            nonbasic = ~self.is_basic
            inc = nonbasic & ~self.at_upper & (d < -dtol) & (self.ub > 0)
            dec = nonbasic & self.at_upper & (d > dtol)
            elig = inc | dec
            if not elig.any():
                return
            if streak >= self.BLAND_AFTER:
                j = int(np.flatnonzero(elig)[0])
            else:
                j = int(np.argmax(np.where(elig, np.abs(d), -1.0)))
            sgn = 1.0 if inc[j] else -1.0
            col = sgn * T[:, j]
            t = self.ub[j]
            r = -1
            xB = self.xB
            ubB = self.ub[self.basis]
            ptol = 1e-11
            with np.errstate(divide="ignore", invalid="ignore"):
                down = np.where(col > ptol, np.maximum(xB, 0.0) / col, np.inf)
                up = np.where((col < -ptol) & np.isfinite(ubB), np.maximum(ubB - xB, 0.0) / (-col), np.inf)
            ratios = np.minimum(down, up)
            if ratios.size:
                rmin = float(np.min(ratios))
                if rmin < t:
                    ties = np.flatnonzero(ratios <= rmin + 1e-12)
                    if streak >= self.BLAND_AFTER:
                        r = int(ties[np.argmin(self.basis[ties])])
                    else:
                        r = int(ties[np.argmax(np.abs(col[ties]))])
                    t = rmin
            if not np.isfinite(t):
                raise InfeasibleError("unbounded direction in a bounded polytope")
            self.xB = xB - t * col
            if r < 0:
                self.at_upper[j] = not self.at_upper[j]
            else:
                entering_val = (self.ub[j] if self.at_upper[j] else 0.0) + sgn * t
                leaving = self.basis[r]
                self.at_upper[leaving] = col[r] < 0
                self._pivot(r, j)
                self.at_upper[j] = False
                self.xB[r] = entering_val
            np.clip(self.xB, 0.0, self.ub[self.basis], out=self.xB)
            streak = streak + 1 if t <= 1e-12 else 0
        raise RuntimeError("simplex pivot limit reached")

    # -- public ------------------------------------------------------------
    def minimize(self, c):
        """Return ``(x, v)`` minimizing ``c.x`` over the polytope."""
        c = np.asarray(c, dtype=float).ravel()
        if c.size != self.n:
            raise ValidationError("cost has length %d, polytope dim %d" % (c.size, self.n))
        lo, up = self.poly.lower, self.poly.upper
        if self._box_only:
            x = np.where(c < 0, up, lo)
            return x, float(c @ x)
        cost = np.zeros(self.N)
        cost[: self.n] = c
        self._run(cost)
        x = lo + self._values()[: self.n]
        x = np.clip(x, lo, up)
        return x, float(c @ x)


def lp_minimize(c, S: PolytopeSpec):
    """Minimize ``c.x`` over ``S``; raises InfeasibleError when ``S`` is empty."""
    return LPOracle(S).minimize(c)


def check_set(S, tag: DomainTag = DomainTag()) -> CheckResult:
    """Verify nonemptiness and that every point respects the tag margin.

    ``S`` may be a PolytopeSpec or a LinearImage; margins are checked on the
    image coordinates.
    """
    img = as_image(S)
    try:
        oracle = LPOracle(img.poly)
    except InfeasibleError:
        return CheckResult("empty")
    if tag.kind == "unrestricted":
        return CheckResult("ok")
    M = np.eye(img.lifted_dim) if img.matrix is None else img.matrix
    off = np.zeros(img.dim) if img.offset is None else img.offset
    m = tag.margin
    for i in range(img.dim):
        _, v = oracle.minimize(M[i])
        if v + off[i] < m - 1e-12:
            return CheckResult("margin-violated", i + 1)
    if tag.kind == "simplex-interior":
        ones = M.sum(axis=0)
        _, vmin = oracle.minimize(ones)
        _, vmax = oracle.minimize(-ones)
        total = off.sum()
        if abs(vmin + total - 1.0) > 1e-8 or abs(-vmax + total - 1.0) > 1e-8:
            return CheckResult("margin-violated", None)
    return CheckResult("ok")


def require_valid(S, tag: DomainTag = DomainTag(), name: str = "set"):
    from .errors import MarginViolation

    res = check_set(S, tag)
    if res.status == "empty":
        raise InfeasibleError("%s is empty" % name)
    if res.status == "margin-violated":
        where = "coordinate %d" % res.coord if res.coord else "simplex membership"
        raise MarginViolation("%s violates the %s margin at %s" % (name, tag.kind, where), res.coord)
    return res


# ---------------------------------------------------------------------------
# builders

def box(lower, upper) -> PolytopeSpec:
    return PolytopeSpec(lower, upper)


def simplex(n: int, ineq=(), eq=()) -> PolytopeSpec:
    """Probability simplex in R^n, optionally intersected with extra rows."""
    return PolytopeSpec.from_constraints(np.zeros(n), np.ones(n), list(ineq), [(np.ones(n), 1.0)] + list(eq))


def singleton(point) -> PolytopeSpec:
    p = np.asarray(point, dtype=float)
    return PolytopeSpec(p, p)


def product(*polys: PolytopeSpec) -> PolytopeSpec:
    """Cartesian product with block-diagonal constraint rows."""
    from scipy.linalg import block_diag

    lower = np.concatenate([P.lower for P in polys])
    upper = np.concatenate([P.upper for P in polys])
    A_ub = block_diag(*[P.A_ub for P in polys])
    A_eq = block_diag(*[P.A_eq for P in polys])
    n = lower.size
    A_ub = np.asarray(A_ub).reshape(-1, n)
    A_eq = np.asarray(A_eq).reshape(-1, n)
    return PolytopeSpec(lower, upper, A_ub, np.concatenate([P.b_ub for P in polys]),
                        A_eq, np.concatenate([P.b_eq for P in polys]))
