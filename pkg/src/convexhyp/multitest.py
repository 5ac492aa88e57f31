"""Assembling pairwise detectors: union tests, weighted multiple tests and
tests with a closeness relation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .schemes import Detector, eval_detector
from .sets import LPOracle, PolytopeSpec
from .solver import perron_positive, spectral_norm_nonneg

__all__ = [
    "MAXMIN",
    "MINMAX",
    "SADDLE",
    "UnionDetector",
    "ChainedDetector",
    "union_assemble",
    "chain_blocks",
    "DetectorMatrix",
    "ClosenessRelation",
    "ShiftResult",
    "weighted_shifts",
    "closeness_shifts",
    "shifted_objective",
    "run_multitest",
    "MultiUnionResult",
    "multiple_unions",
    "block_norm_matrix",
    "multi_sample_bound",
]

MAXMIN, MINMAX, SADDLE = "maxmin", "minmax", "saddle"
_MODES = (MAXMIN, MINMAX, SADDLE)

# shift used for one-directional pairs whose optimal shift is unbounded;
# the neglected term is eps_ij * exp(-_FAR)
_FAR = 40.0


def _evaluate(det, obs):
    if isinstance(det, Detector):
        return np.asarray(eval_detector(det, obs), dtype=float)
    return np.asarray(det(obs), dtype=float)


# ---------------------------------------------------------------------------
# union tests

def _game_value(A: np.ndarray) -> float:
    """max over lambda in simplex(m), min over mu in simplex(n), of lambda^T A mu."""
    m, n = A.shape
    if m == 1:
        return float(A.min())
    if n == 1:
        return float(A.max())
    lo, hi = float(A.min()), float(A.max())
    if hi - lo <= 1e-300:
        return lo
    # variables (lambda, v); v - (A^T lambda)_j <= 0, sum lambda = 1
    A_ub = np.hstack([-A.T, np.ones((n, 1))])
    A_eq = np.concatenate([np.ones(m), [0.0]])[None, :]
    poly = PolytopeSpec(np.concatenate([np.zeros(m), [lo]]), np.concatenate([np.ones(m), [hi]]),
                        A_ub, np.zeros(n), A_eq, np.ones(1))
    c = np.zeros(m + 1)
    c[-1] = -1.0
    _, val = LPOracle(poly).minimize(c)
    return float(min(hi, max(lo, -val)))


@dataclass(frozen=True, eq=False)
class UnionDetector:
    """Aggregate of pairwise detectors for a union-vs-union problem.

    ``phi(obs) = max_i min_j [phi_ij(obs) - a_ij]`` in ``maxmin`` mode; ``minmax``
    swaps the order and ``saddle`` takes the value of the mixed matrix game.
    All three satisfy the same risk bound ``eps``.
    """

    detectors: Tuple[Tuple[object, ...], ...]
    a: np.ndarray
    E: np.ndarray
    eps: float
    g: np.ndarray
    h: np.ndarray
    mode: str = MAXMIN

    @property
    def shape(self):
        return self.E.shape

    def with_mode(self, mode: str) -> "UnionDetector":
        if mode not in _MODES:
            raise ValidationError("unknown aggregation mode %r" % mode)
        return UnionDetector(self.detectors, self.a, self.E, self.eps, self.g, self.h, mode)

    def matrix(self, obs) -> np.ndarray:
        """Shifted pairwise values, shape (m, n) + batch shape."""
        m, n = self.shape
        vals = [[_evaluate(self.detectors[i][j], obs) - self.a[i, j] for j in range(n)] for i in range(m)]
        return np.asarray(vals, dtype=float)

    def __call__(self, obs, mode: Optional[str] = None):
        mode = self.mode if mode is None else mode
        if mode not in _MODES:
            raise ValidationError("unknown aggregation mode %r" % mode)
        V = self.matrix(obs)
        if mode == MAXMIN:
            out = V.min(axis=1).max(axis=0)
        elif mode == MINMAX:
            out = V.max(axis=0).min(axis=0)
        else:
            m, n = self.shape
            flat = V.reshape(m, n, -1)
            out = np.array([_game_value(flat[:, :, k]) for k in range(flat.shape[2])])
            out = out.reshape(V.shape[2:])
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        return {"E": self.E.tolist(), "a": self.a.tolist(), "eps": self.eps,
                "g": self.g.tolist(), "h": self.h.tolist(), "mode": self.mode}


def union_assemble(E, detectors, mode: str = MAXMIN) -> UnionDetector:
    """Combine detectors ``phi_ij`` for X_i vs Y_j into one detector for
    ``union X_i`` vs ``union Y_j`` with risk ``||E||_2``."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if E.ndim != 2:
        raise ValidationError("risk matrix must be 2-D")
    if np.any(~np.isfinite(E)) or np.any(E <= 0):
        raise ValidationError("risk matrix entries must be positive")
    m, n = E.shape
    dets = tuple(tuple(row) for row in detectors)
    if len(dets) != m or any(len(r) != n for r in dets):
        raise ValidationError("detector grid must be %d x %d" % (m, n))
    if mode not in _MODES:
        raise ValidationError("unknown aggregation mode %r" % mode)
    if m == 1 and n == 1:
        sigma, g, h = float(E[0, 0]), np.ones(1), np.ones(1)
    else:
        sigma, g, h = spectral_norm_nonneg(E)
    a = np.log(h)[None, :] - np.log(g)[:, None]
    return UnionDetector(dets, a, E, sigma, g, h, mode)


@dataclass(frozen=True, eq=False)
class ChainedDetector:
    """Sum of per-block detectors over independent observation blocks."""

    blocks: Tuple[object, ...]

    @property
    def eps(self) -> float:
        return float(np.prod([b.eps for b in self.blocks]))

    def __call__(self, obs_blocks):
        if len(obs_blocks) != len(self.blocks):
            raise ValidationError("expected %d observation blocks" % len(self.blocks))
        total = 0.0
        for b, o in zip(self.blocks, obs_blocks):
            total = total + (b(o) if not isinstance(b, Detector) else eval_detector(b, o))
        return total


def chain_blocks(blocks: Sequence[UnionDetector]) -> ChainedDetector:
    if not blocks:
        raise ValidationError("need at least one block")
    return ChainedDetector(tuple(blocks))


# ---------------------------------------------------------------------------
# multiple hypotheses

@dataclass(frozen=True, eq=False)
class DetectorMatrix:
    """Antisymmetric family of pairwise detectors with risks.

    Only ``phi_ij`` for ``i < j`` is stored; ``phi_ji = -phi_ij``.
    """

    M: int
    detectors: Dict[Tuple[int, int], object]
    risks: np.ndarray

    def __post_init__(self):
        E = np.asarray(self.risks, dtype=float)
        if E.shape != (self.M, self.M):
            raise ValidationError("risk matrix must be %d x %d" % (self.M, self.M))
        for i in range(self.M):
            for j in range(i + 1, self.M):
                if (i, j) not in self.detectors:
                    raise ValidationError("missing detector for pair (%d, %d)" % (i + 1, j + 1))
        object.__setattr__(self, "risks", E)

    @classmethod
    def from_solutions(cls, M: int, sols: Dict[Tuple[int, int], object]) -> "DetectorMatrix":
        """Build from pairwise solutions keyed by 0-based ``(i, j)``, ``i < j``."""
        E = np.zeros((M, M))
        dets = {}
        for (i, j), s in sols.items():
            if i > j:
                i, j = j, i
                s = s.swapped() if hasattr(s, "swapped") else s
            dets[(i, j)] = s.detector
            E[i, j] = E[j, i] = s.eps_star
        return cls(M, dets, E)

    def values(self, obs) -> np.ndarray:
        """Matrix of ``phi_ij(obs)``, zero on the diagonal; shape (M, M) + batch."""
        first = _evaluate(self.detectors[(0, 1)], obs)
        out = np.zeros((self.M, self.M) + np.shape(first))
        for (i, j), d in self.detectors.items():
            v = first if (i, j) == (0, 1) else _evaluate(d, obs)
            out[i, j] = v
            out[j, i] = -v
        return out


@dataclass(frozen=True)
class ClosenessRelation:
    """Ordered pairs (0-based) ``(i, j)`` meaning H_j is close to H_i."""

    M: int
    pairs: frozenset

    def __post_init__(self):
        pairs = set((int(i), int(j)) for i, j in self.pairs)
        for i, j in pairs:
            if not (0 <= i < self.M and 0 <= j < self.M):
                raise ValidationError("pair (%d, %d) out of range" % (i, j))
        pairs |= {(i, i) for i in range(self.M)}
        object.__setattr__(self, "pairs", frozenset(pairs))

    @classmethod
    def diagonal(cls, M: int) -> "ClosenessRelation":
        return cls(M, frozenset())

    @classmethod
    def from_partition(cls, blocks: Sequence[Sequence[int]]) -> "ClosenessRelation":
        blocks = _check_partition(blocks)
        M = sum(len(b) for b in blocks)
        return cls(M, frozenset((i, j) for b in blocks for i in b for j in b))

    def mask(self) -> np.ndarray:
        """Boolean matrix, True where the pair is close."""
        C = np.zeros((self.M, self.M), dtype=bool)
        for i, j in self.pairs:
            C[i, j] = True
        return C


@dataclass(frozen=True, eq=False)
class ShiftResult:
    alpha: np.ndarray
    eps: float
    lower: float
    row_sums: np.ndarray

    @property
    def gap(self) -> float:
        return max(0.0, self.eps - self.lower)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "eps": self.eps, "lower": self.lower,
                "gap": self.gap, "row_sums": self.row_sums.tolist()}


def shifted_objective(E, alpha, C=None, p=None) -> Tuple[float, np.ndarray]:
    """max_i p_i sum_{j: (i,j) not close} eps_ij exp(alpha_ij) and the row sums."""
    E = np.asarray(E, dtype=float)
    M = E.shape[0]
    W = E * np.exp(np.asarray(alpha, dtype=float))
    W[np.eye(M, dtype=bool)] = 0.0
    if C is not None:
        W[C.mask() if isinstance(C, ClosenessRelation) else np.asarray(C, dtype=bool)] = 0.0
    rows = W.sum(axis=1)
    if p is not None:
        rows = rows * np.asarray(p, dtype=float)
    return float(rows.max()), rows


def weighted_shifts(E, p=None) -> ShiftResult:
    """Skew-symmetric shifts minimizing the worst importance-weighted rejection bound."""
    E = np.asarray(E, dtype=float)
    M = E.shape[0]
    if E.ndim != 2 or E.shape != (M, M) or M < 2:
        raise ValidationError("need a square risk matrix of size >= 2")
    off = ~np.eye(M, dtype=bool)
    if np.any(E[off] <= 0) or np.any(~np.isfinite(E)):
        raise ValidationError("off-diagonal risks must be positive")
    p = np.ones(M) if p is None else np.asarray(p, dtype=float)
    if p.shape != (M,) or np.any(p <= 0):
        raise ValidationError("importance weights must be positive")
    Ebar = p[:, None] * np.where(off, E, 0.0)
    rho, g = perron_positive(Ebar)
    lg = np.log(g)
    alpha = lg[None, :] - lg[:, None]
    val, rows = shifted_objective(np.where(off, E, 0.0), alpha, p=p)
    return ShiftResult(alpha, val, rho, rows)


def _components(adj: np.ndarray) -> List[List[int]]:
    M = adj.shape[0]
    seen = np.zeros(M, dtype=bool)
    comps = []
    for s in range(M):
        if seen[s]:
            continue
        seen[s] = True
        stack, comp = [s], []
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in np.nonzero(adj[i] & ~seen)[0]:
                seen[j] = True
                stack.append(int(j))
        comps.append(sorted(comp))
    return comps


def closeness_shifts(E, C: ClosenessRelation) -> ShiftResult:
    """Skew-symmetric shifts minimizing max_i sum_{(i,j) not close} eps_ij e^alpha_ij.

    Pairs that count in both directions reduce to a symmetric matrix
    sqrt(eps_ij eps_ji) whose Perron vector (per connected component) gives
    the optimal shifts. A pair counting in one direction only is pushed far
    out, since its term can be made arbitrarily small. ``lower`` is the exact
    optimal value, so ``gap`` certifies the returned shifts.
    """
    E = np.asarray(E, dtype=float)
    M = E.shape[0]
    if E.shape != (M, M) or C.M != M:
        raise ValidationError("risk matrix and closeness relation sizes differ")
    close = C.mask()
    far = ~close
    if not far.any():
        raise ValidationError("all-close: every pair is close, the bound is vacuous")
    if np.any(E[far] <= 0) or np.any(~np.isfinite(E[far])):
        raise ValidationError("risks of non-close pairs must be positive")
    both = far & far.T
    D = np.where(both, np.sqrt(np.where(both, E * E.T, 1.0)), 0.0)
    alpha = np.zeros((M, M))
    lower = 0.0
    for comp in _components(both):
        if len(comp) < 2:
            continue
        idx = np.asarray(comp)
        rho, g = perron_positive(D[np.ix_(idx, idx)], irreducible=True)
        lower = max(lower, rho)
        lg = np.log(g)
        alpha[np.ix_(idx, idx)] = lg[None, :] - lg[:, None]
    # per-pair correction so that eps_ij e^alpha_ij = D_ij g_j / g_i
    corr = np.zeros((M, M))
    corr[both] = 0.5 * (np.log(E.T[both]) - np.log(E[both]))
    alpha = np.where(both, alpha + corr, 0.0)
    one_way = far & close.T
    alpha[one_way] = -_FAR
    alpha[one_way.T] = _FAR
    val, rows = shifted_objective(E, alpha, C)
    return ShiftResult(alpha, val, lower, rows)


def run_multitest(dm: DetectorMatrix, alpha, C: ClosenessRelation, obs):
    """Accept H_i iff every shifted detector phi_ij - alpha_ij with (i, j) not
    close is strictly positive.

    Returns a sorted list of 0-based indexes for a single observation, or a
    boolean array of shape (M,) + batch for a batch.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (dm.M, dm.M) or C.M != dm.M:
        raise ValidationError("shape mismatch between detectors, shifts and closeness relation")
    V = dm.values(obs)
    extra = V.ndim - 2
    Vp = V - alpha.reshape(alpha.shape + (1,) * extra)
    ok = (Vp > 0) | C.mask().reshape((dm.M, dm.M) + (1,) * extra)
    acc = ok.all(axis=1)
    if extra == 0:
        return [int(i) for i in np.nonzero(acc)[0]]
    return acc


def _check_partition(blocks) -> List[List[int]]:
    blocks = [sorted(int(i) for i in b) for b in blocks]
    if len(blocks) < 2 or any(len(b) == 0 for b in blocks):
        raise ValidationError("bad-partition: need at least two nonempty blocks")
    allidx = sorted(i for b in blocks for i in b)
    if allidx != list(range(len(allidx))):
        raise ValidationError("bad-partition: blocks must cover 0..M-1 without overlap")
    return blocks


def block_norm_matrix(D, blocks) -> np.ndarray:
    """L x L matrix of spectral norms of the blocks of D."""
    blocks = _check_partition(blocks)
    D = np.asarray(D, dtype=float)
    L = len(blocks)
    G = np.zeros((L, L))
    for a in range(L):
        for b in range(L):
            sub = D[np.ix_(blocks[a], blocks[b])]
            G[a, b] = spectral_norm_nonneg(sub)[0] if np.any(sub > 0) else 0.0
    return G


@dataclass(frozen=True, eq=False)
class MultiUnionResult:
    blocks: Tuple[Tuple[int, ...], ...]
    D: np.ndarray
    shifts: ShiftResult
    eps: float
    eps_two_stage: float
    accepted: object = None

    def to_dict(self) -> dict:
        acc = self.accepted
        if isinstance(acc, np.ndarray):
            acc = acc.tolist()
        return {"blocks": [list(b) for b in self.blocks], "D": self.D.tolist(),
                "eps": self.eps, "eps_two_stage": self.eps_two_stage,
                "shifts": self.shifts.to_dict(), "accepted": acc}


def multiple_unions(blocks, dm: DetectorMatrix, obs=None) -> MultiUnionResult:
    """Decide which block of hypotheses holds; at most one block is accepted.

    ``accepted`` is the 0-based block index or None (per observation in a batch,
    with -1 for none).
    """
    blocks = _check_partition(blocks)
    C = ClosenessRelation.from_partition(blocks)
    if C.M != dm.M:
        raise ValidationError("bad-partition: covers %d hypotheses, detectors have %d" % (C.M, dm.M))
    E = dm.risks
    D = np.where(C.mask(), 0.0, E)
    shifts = closeness_shifts(E, C)
    eps = spectral_norm_nonneg(D)[0]
    G = block_norm_matrix(D, blocks)
    eps2 = spectral_norm_nonneg(G)[0]
    owner = np.empty(dm.M, dtype=int)
    for b, blk in enumerate(blocks):
        owner[blk] = b
    accepted = None
    if obs is not None:
        acc = run_multitest(dm, shifts.alpha, C, obs)
        if isinstance(acc, list):
            bl = sorted(set(int(owner[i]) for i in acc))
            if len(bl) > 1:
                raise AssertionError("accepted hypotheses from different blocks")
            accepted = bl[0] if bl else None
        else:
            out = np.full(acc.shape[1:], -1, dtype=int)
            for i in range(dm.M):
                out[acc[i]] = owner[i]
            accepted = out
    return MultiUnionResult(tuple(tuple(b) for b in blocks), D, shifts, float(eps), float(eps2), accepted)


def multi_sample_bound(eps: float, M: int, Kbar: int) -> int:
    """Smallest K with K >= 2 ln(M/eps) / (ln(1/eps) - 2 ln 2) * Kbar."""
    if not 0 < eps < 0.25:
        raise ValidationError("eps must lie in (0, 1/4)")
    if M < 1 or Kbar < 1:
        raise ValidationError("M and Kbar must be positive")
    v = 2.0 * math.log(M / eps) / (math.log(1.0 / eps) - 2.0 * math.log(2.0)) * Kbar
    r = round(v)
    return int(r) if abs(v - r) <= 1e-9 * max(1.0, v) else int(math.ceil(v))
