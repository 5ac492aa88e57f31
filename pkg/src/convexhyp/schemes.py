"""Gaussian, Poisson and Discrete observation schemes and their products.

Each factor knows its pairwise objective ``psi`` (with gradients), how to
turn a pair of parameter points into an affine/table detector part, and how
to sample observations. Observations for a factor with ``repeat = r`` have
trailing shape ``(r, dim)`` (Gaussian, Poisson) or ``(r,)`` (Discrete, with
outcomes numbered 1..m); any leading axes are treated as a batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import ValidationError
from .sets import DomainTag

__all__ = [
    "GaussianFactor",
    "PoissonFactor",
    "DiscreteFactor",
    "ProductScheme",
    "AffinePart",
    "TablePart",
    "Detector",
    "psi_eval",
    "build_detector",
    "eval_detector",
    "sample_obs",
    "make_rng",
    "write_observations",
    "read_observations",
]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(seed, stream)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def _vec(x, n, what="parameter"):
    x = np.asarray(x, dtype=float).ravel()
    if x.size != n:
        raise ValidationError("%s has length %d, expected %d" % (what, x.size, n))
    return x


@dataclass(frozen=True, eq=False)
class GaussianFactor:
    """Observation ``N(mu, cov)`` in R^dim."""

    dim: int
    cov: np.ndarray = None
    repeat: int = 1
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        cov = np.eye(self.dim) if self.cov is None else np.array(self.cov, dtype=float)
        cov = np.atleast_2d(cov)
        if self.dim < 1 or cov.shape != (self.dim, self.dim):
            raise ValidationError("covariance must be %d x %d" % (self.dim, self.dim))
        if not np.allclose(cov, cov.T, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValidationError("covariance must be symmetric")
        try:
            chol = cho_factor(cov, lower=True)
        except np.linalg.LinAlgError:
            raise ValidationError("covariance is not positive definite") from None
        if self.repeat < 1:
            raise ValidationError("repeat must be >= 1")
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)
        L = np.tril(chol[0])
        object.__setattr__(self, "_L", L)

    def solve(self, v):
        return cho_solve(self._chol, v)

    def whiten(self, v):
        """Sigma^{-1/2} v using the Cholesky factor."""
        return solve_triangular(self._L, v, lower=True)

    @property
    def tag(self):
        return DomainTag()

    def psi(self, x, y):
        d = x - y
        sd = self.solve(d)
        return -0.25 * float(d @ sd), -0.5 * sd, 0.5 * sd

    def neg_hessian(self, x, y):
        S = 0.5 * self.solve(np.eye(self.dim))
        return S, -S, S

    def detector_part(self, x, y):
        xi = 0.5 * self.solve(x - y)
        return AffinePart(xi, 0.5 * float(xi @ (x + y)))

    def sample(self, mu, rng, size=()):
        shape = tuple(np.atleast_1d(size)) if size != () else ()
        z = rng.standard_normal(shape + (self.repeat, self.dim))
        return mu + z @ self._L.T

    def obs_shape(self):
        return (self.repeat, self.dim)


@dataclass(frozen=True, eq=False)
class PoissonFactor:
    """Independent Poisson counts with means ``mu`` (a product of scalar schemes)."""

    dim: int
    repeat: int = 1
    margin: float = 1e-9
    kind: str = field(default="poisson", init=False)

    def __post_init__(self):
        if self.dim < 1 or self.repeat < 1:
            raise ValidationError("dim and repeat must be >= 1")

    @property
    def tag(self):
        return DomainTag("positive-orthant", self.margin)

    def psi(self, x, y):
        if np.any(x <= 0) or np.any(y <= 0):
            raise ValidationError("Poisson intensities must be positive")
        sx, sy = np.sqrt(x), np.sqrt(y)
        return -float(np.sum((sx - sy) ** 2)), sy / sx - 1.0, sx / sy - 1.0

    def neg_hessian(self, x, y):
        sx, sy = np.sqrt(x), np.sqrt(y)
        return np.diag(0.5 * sy / (x * sx)), np.diag(-0.5 / (sx * sy)), np.diag(0.5 * sx / (y * sy))

    def detector_part(self, x, y):
        if np.any(x <= 0) or np.any(y <= 0):
            raise ValidationError("Poisson intensities must be positive")
        return AffinePart(0.5 * np.log(x / y), 0.5 * float(np.sum(x - y)))

    def sample(self, mu, rng, size=()):
        if np.any(np.asarray(mu) < 0):
            raise ValidationError("Poisson intensities must be nonnegative")
        shape = tuple(np.atleast_1d(size)) if size != () else ()
        return rng.poisson(np.broadcast_to(mu, shape + (self.repeat, self.dim)))

    def obs_shape(self):
        return (self.repeat, self.dim)


@dataclass(frozen=True, eq=False)
class DiscreteFactor:
    """Categorical observation on outcomes 1..dim with probability vector ``mu``."""

    dim: int
    repeat: int = 1
    margin: float = 1e-9
    kind: str = field(default="discrete", init=False)

    def __post_init__(self):
        if self.dim < 1 or self.repeat < 1:
            raise ValidationError("dim and repeat must be >= 1")

    @property
    def tag(self):
        return DomainTag("simplex-interior", self.margin)

    def psi(self, x, y):
        if np.any(x <= 0) or np.any(y <= 0):
            raise ValidationError("Discrete probabilities must be positive")
        sx, sy = np.sqrt(x), np.sqrt(y)
        s = float(sx @ sy)
        return 2.0 * np.log(s), (sy / sx) / s, (sx / sy) / s

    def neg_hessian(self, x, y):
        sx, sy = np.sqrt(x), np.sqrt(y)
        s = float(sx @ sy)
        a, b = sy / sx, sx / sy
        hxx = np.diag(0.5 * sy / (x * sx)) / s + 0.5 * np.outer(a, a) / s ** 2
        hxy = -np.diag(0.5 / (sx * sy)) / s + 0.5 * np.outer(a, b) / s ** 2
        hyy = np.diag(0.5 * sx / (y * sy)) / s + 0.5 * np.outer(b, b) / s ** 2
        return hxx, hxy, hyy

    def detector_part(self, x, y):
        if np.any(x <= 0) or np.any(y <= 0):
            raise ValidationError("Discrete probabilities must be positive")
        return TablePart(0.5 * np.log(x / y))

    def sample(self, mu, rng, size=()):
        mu = np.asarray(mu, dtype=float)
        if np.any(mu < 0):
            raise ValidationError("probabilities must be nonnegative")
        shape = tuple(np.atleast_1d(size)) if size != () else ()
        cdf = np.cumsum(mu)
        cdf /= cdf[-1]
        u = rng.random(shape + (self.repeat,))
        return np.minimum(np.searchsorted(cdf, u, side="right"), self.dim - 1) + 1

    def obs_shape(self):
        return (self.repeat,)


Factor = Union[GaussianFactor, PoissonFactor, DiscreteFactor]


@dataclass(frozen=True, eq=False)
class ProductScheme:
    factors: Tuple[Factor, ...]

    def __post_init__(self):
        fs = tuple(self.factors)
        if not fs:
            raise ValidationError("a scheme needs at least one factor")
        object.__setattr__(self, "factors", fs)
        cuts = np.cumsum([0] + [f.dim for f in fs])
        object.__setattr__(self, "_cuts", cuts)

    @property
    def dim(self) -> int:
        return int(self._cuts[-1])

    def split(self, x) -> List[np.ndarray]:
        x = _vec(x, self.dim)
        return [x[self._cuts[k]:self._cuts[k + 1]] for k in range(len(self.factors))]

    def slices(self):
        return [slice(self._cuts[k], self._cuts[k + 1]) for k in range(len(self.factors))]

    def psi_total(self, x, y):
        """Sum of repeat_k * psi_k with gradients in the full parameter space."""
        val = 0.0
        gx = np.empty(self.dim)
        gy = np.empty(self.dim)
        for f, sl in zip(self.factors, self.slices()):
            v, a, b = f.psi(x[sl], y[sl])
            val += f.repeat * v
            gx[sl] = f.repeat * a
            gy[sl] = f.repeat * b
        return val, gx, gy

    def neg_hessian_total(self, x, y):
        """Negative Hessian of psi_total in the stacked (x, y) coordinates (PSD)."""
        n = self.dim
        H = np.zeros((2 * n, 2 * n))
        for f, sl in zip(self.factors, self.slices()):
            hxx, hxy, hyy = f.neg_hessian(x[sl], y[sl])
            sy = slice(sl.start + n, sl.stop + n)
            H[sl, sl] = f.repeat * hxx
            H[sl, sy] = f.repeat * hxy
            H[sy, sl] = f.repeat * hxy.T
            H[sy, sy] = f.repeat * hyy
        return H


def single(factor) -> ProductScheme:
    return ProductScheme((factor,))


# ---------------------------------------------------------------------------
# detectors

@dataclass(frozen=True, eq=False)
class AffinePart:
    xi: np.ndarray
    alpha: float

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float).ravel()
        if not (np.all(np.isfinite(xi)) and np.isfinite(self.alpha)):
            raise ValidationError("detector coefficients must be finite")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "alpha", float(self.alpha))

    def value(self, obs):
        # obs: (..., repeat, dim)
        return np.sum(obs @ self.xi - self.alpha, axis=-1)

    def negate(self):
        return AffinePart(-self.xi, -self.alpha)

    def scaled(self, c):
        return AffinePart(c * self.xi, c * self.alpha)

    def to_dict(self):
        return {"type": "affine", "xi": self.xi.tolist(), "alpha": self.alpha}


@dataclass(frozen=True, eq=False)
class TablePart:
    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float).ravel()
        if not np.all(np.isfinite(t)):
            raise ValidationError("detector table must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def value(self, obs):
        obs = np.asarray(obs)
        if obs.size and (obs.min() < 1 or obs.max() > self.table.size):
            raise ValidationError("Discrete outcome outside 1..%d" % self.table.size)
        return np.sum(self.table[obs.astype(int) - 1], axis=-1)

    def negate(self):
        return TablePart(-self.table)

    def scaled(self, c):
        return TablePart(c * self.table)

    def to_dict(self):
        return {"type": "table", "table": self.table.tolist()}


def _part_from_dict(d):
    if d["type"] == "affine":
        return AffinePart(d["xi"], d["alpha"])
    if d["type"] == "table":
        return TablePart(d["table"])
    raise ValidationError("unknown detector part %r" % d.get("type"))


@dataclass(frozen=True, eq=False)
class Detector:
    """phi(obs) = sum over factors and repeats of the per-observation parts, minus ``shift``."""

    scheme: ProductScheme
    parts: Tuple[Union[AffinePart, TablePart], ...]
    shift: float = 0.0

    def __post_init__(self):
        parts = tuple(self.parts)
        if len(parts) != len(self.scheme.factors):
            raise ValidationError("one detector part per factor required")
        object.__setattr__(self, "parts", parts)

    def __call__(self, obs):
        return eval_detector(self, obs)

    def with_shift(self, a: float) -> "Detector":
        return Detector(self.scheme, self.parts, float(a))

    def negate(self) -> "Detector":
        return Detector(self.scheme, tuple(p.negate() for p in self.parts), -self.shift)

    def to_dict(self):
        return {"shift": self.shift, "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, scheme, d):
        return cls(scheme, tuple(_part_from_dict(p) for p in d["parts"]), float(d.get("shift", 0.0)))


def psi_eval(factor, x, y):
    """``(psi, grad_x, grad_y)`` for one factor (repeat not applied)."""
    x = _vec(x, factor.dim)
    y = _vec(y, factor.dim)
    return factor.psi(x, y)


def build_detector(factor, x, y):
    """Per-factor detector part for the pair of parameter points ``(x, y)``."""
    return factor.detector_part(_vec(x, factor.dim), _vec(y, factor.dim))


def _as_factor_obs(f, o):
    o = np.asarray(o)
    shp = f.obs_shape()
    if f.kind == "discrete":
        if o.ndim == 0 and f.repeat == 1:
            o = o.reshape(1)
    elif o.ndim == 1 and f.repeat == 1 and o.shape[0] == f.dim:
        o = o.reshape(1, f.dim)
    if o.shape[o.ndim - len(shp):] != shp or o.ndim < len(shp):
        raise ValidationError("observation shape %s does not end with %s" % (o.shape, shp))
    return o


def eval_detector(d: Detector, obs) -> Union[float, np.ndarray]:
    """Evaluate a detector on one observation or a batch (leading axes)."""
    if len(obs) != len(d.parts):
        raise ValidationError("expected %d factor observations, got %d" % (len(d.parts), len(obs)))
    total = 0.0
    for f, p, o in zip(d.scheme.factors, d.parts, obs):
        total = total + p.value(_as_factor_obs(f, o))
    out = total - d.shift
    return float(out) if np.ndim(out) == 0 else out


def sample_obs(scheme: ProductScheme, mu, rng: np.random.Generator, size=()):
    """Draw one observation (or a batch of ``size``) at parameter ``mu``."""
    parts = scheme.split(mu)
    return [f.sample(m, rng, size) for f, m in zip(scheme.factors, parts)]


# ---------------------------------------------------------------------------
# observation files: one observation per line, factor-major

def _flatten_obs(scheme, obs):
    return [np.asarray(o).reshape(-1) for f, o in zip(scheme.factors, obs)]


def write_observations(path, scheme: ProductScheme, batch) -> None:
    """Write a batch (list of per-factor arrays with one leading axis) to text."""
    n = np.asarray(batch[0]).shape[0]
    with open(path, "w") as fh:
        for i in range(n):
            fields = []
            for f, o in zip(scheme.factors, batch):
                row = np.asarray(o[i]).reshape(-1)
                if f.kind == "gaussian":
                    fields += [repr(float(v)) for v in row]
                else:
                    fields += [str(int(v)) for v in row]
            fh.write(" ".join(fields) + "\n")


def read_observations(path, scheme: ProductScheme):
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append(line.split())
    widths = [int(np.prod(f.obs_shape())) for f in scheme.factors]
    total = sum(widths)
    out = [[] for _ in scheme.factors]
    for r in rows:
        if len(r) != total:
            raise ValidationError("observation line has %d fields, expected %d" % (len(r), total))
        pos = 0
        for k, (f, w) in enumerate(zip(scheme.factors, widths)):
            chunk = r[pos:pos + w]
            pos += w
            if f.kind == "gaussian":
                out[k].append(np.array([float(v) for v in chunk]).reshape(f.obs_shape()))
            else:
                out[k].append(np.array([int(v) for v in chunk]).reshape(f.obs_shape()))
    return [np.array(o) for o in out]
