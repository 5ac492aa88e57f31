"""Monte Carlo risk estimation, Markov chain simulation and Monte Carlo
estimates of the testing affinity (a lower bound on the risk of any test)."""
from __future__ import annotations

import math
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import ValidationError
from .pairtest import PairSolution, accepts_x
from .schemes import ProductScheme, sample_obs

__all__ = [
    "RiskReport",
    "clopper_pearson",
    "estimate_risk",
    "pair_labels",
    "point_sampler",
    "simulate_chain",
    "IIDDiscrete",
    "IIDCounts",
    "AffinityEstimate",
    "affinity_lower_bound",
]


def _rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def clopper_pearson(k: int, n: int, level: float = 0.95) -> Tuple[float, float]:
    """Exact binomial confidence interval for k successes out of n."""
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


@dataclass(frozen=True)
class RiskReport:
    """Empirical rejection frequencies of the true hypothesis, one per hypothesis."""

    N: int
    errors: Tuple[int, ...]
    eps_hat: Tuple[float, ...]
    ci: Tuple[Tuple[float, float], ...]
    bound: Optional[float] = None
    seed: int = 0
    stream: int = 0
    names: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def max_risk(self) -> float:
        return max(self.eps_hat)

    def half_width(self, k: int) -> float:
        lo, hi = self.ci[k]
        return 0.5 * (hi - lo)

    def complies(self, slack: float = 3.0) -> bool:
        """Every estimate <= bound + slack * (CI half-width)."""
        if self.bound is None:
            return True
        return all(e <= self.bound + slack * self.half_width(k) for k, e in enumerate(self.eps_hat))

    def to_dict(self) -> dict:
        return {"N": self.N, "errors": list(self.errors), "eps_hat": list(self.eps_hat),
                "ci": [list(c) for c in self.ci], "bound": self.bound, "seed": self.seed,
                "stream": self.stream, "names": list(self.names)}

    def table(self) -> str:
        names = self.names or tuple("H%d" % (k + 1) for k in range(len(self.errors)))
        lines = ["%-8s %8s %12s %12s %12s" % ("truth", "errors", "eps_hat", "ci_lo", "ci_hi")]
        for nm, e, r, (lo, hi) in zip(names, self.errors, self.eps_hat, self.ci):
            lines.append("%-8s %8d %12.6g %12.6g %12.6g" % (nm, e, r, lo, hi))
        if self.bound is not None:
            lines.append("bound %.6g  N=%d" % (self.bound, self.N))
        return "\n".join(lines)


def estimate_risk(test: Callable, truths: Sequence[Callable], N: int = 5000, seed: int = 0,
                  stream: int = 0, bound: Optional[float] = None, chunk: int = 1000,
                  workers: int = 1, names: Sequence[str] = ()) -> RiskReport:
    """Rejection frequency of each true hypothesis.

    ``truths[k](rng, size)`` draws a batch of observations under hypothesis k;
    ``test(batch)`` returns the accepted hypothesis index per observation, and
    a replication errs when that index differs from k. Replications are cut
    into chunks with their own RNG stream (seed, stream, k, chunk), so the
    counts do not depend on ``workers``.
    """
    if N < 1:
        raise ValidationError("N must be >= 1")
    jobs = []
    for k in range(len(truths)):
        for c, start in enumerate(range(0, N, chunk)):
            jobs.append((k, c, min(chunk, N - start)))

    def run(job):
        k, c, size = job
        rng = _rng(seed, stream, k, c)
        labels = np.asarray(test(truths[k](rng, size))).reshape(-1)
        if labels.size != size:
            raise ValidationError("test returned %d labels for %d observations" % (labels.size, size))
        return k, int(np.count_nonzero(labels != k))

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    errors = [0] * len(truths)
    for k, e in results:
        errors[k] += e
    return RiskReport(N=N, errors=tuple(errors), eps_hat=tuple(e / N for e in errors),
                      ci=tuple(clopper_pearson(e, N) for e in errors), bound=bound,
                      seed=int(seed), stream=int(stream), names=tuple(names))


def pair_labels(sol: PairSolution) -> Callable:
    """Labels 0 (accept X) / 1 (accept Y) of the pair test on a batch."""
    def test(batch):
        return np.where(accepts_x(sol, batch), 0, 1)
    return test


def point_sampler(scheme: ProductScheme, mu) -> Callable:
    mu = np.asarray(mu, dtype=float)

    def draw(rng, size):
        return sample_obs(scheme, mu, rng, (size,))
    return draw


# ---------------------------------------------------------------------------
# Markov chains

def simulate_chain(S, initial, K: int, rng: np.random.Generator, A=None, size: Optional[int] = None,
                   pairs: bool = False):
    """States (1-based) of a chain with column-stochastic ``S`` and their observations.

    Returns ``(states, obs)``: states has shape (K+1,) or (size, K+1). With
    ``pairs=False`` obs[t] is drawn from column states[t] of the channel A
    (A=None: obs = states). With ``pairs=True`` there are K observations of
    the transitions, coded 1 + i*n + j for the move from state j+1 to i+1,
    and A (if given) acts on these n^2 codes.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n) or np.any(S < -1e-12) or np.max(np.abs(S.sum(axis=0) - 1)) > 1e-9:
        raise ValidationError("S must be square and column-stochastic")
    if K < 0:
        raise ValidationError("K must be >= 0")
    p0 = np.asarray(initial, dtype=float)
    if p0.shape != (n,) or np.any(p0 < 0) or abs(p0.sum() - 1) > 1e-9:
        raise ValidationError("initial distribution must be a probability vector of length %d" % n)
    batch = 1 if size is None else int(size)
    cum = np.cumsum(np.clip(S, 0, None), axis=0)
    cum /= cum[-1]
    u0 = rng.random(batch)
    c0 = np.cumsum(p0) / p0.sum()
    states = np.empty((batch, K + 1), dtype=np.int64)
    states[:, 0] = np.minimum(np.searchsorted(c0, u0, side="right"), n - 1)
    U = rng.random((K, batch))
    if batch == 1:
        cols = [cum[:, j].tolist() for j in range(n)]
        cur = int(states[0, 0])
        row = states[0]
        for t in range(K):
            cur = min(bisect_right(cols[cur], U[t, 0]), n - 1)
            row[t + 1] = cur
    else:
        cumT = cum.T
        for t in range(K):
            prev = states[:, t]
            states[:, t + 1] = np.minimum((U[t][:, None] >= cumT[prev]).sum(axis=1), n - 1)
    if pairs:
        codes = states[:, 1:] * n + states[:, :-1]
    else:
        codes = states
    if A is None:
        obs = codes + 1
    else:
        A = np.asarray(A, dtype=float)
        m = A.shape[0]
        if A.shape[1] != (n * n if pairs else n) or np.max(np.abs(A.sum(axis=0) - 1)) > 1e-9:
            raise ValidationError("channel must be column-stochastic with %d columns" % (n * n if pairs else n))
        cumA = np.cumsum(np.clip(A, 0, None), axis=0)
        cumA /= cumA[-1]
        ua = rng.random(codes.shape)
        obs = np.empty(codes.shape, dtype=np.int64)
        for j in np.unique(codes):
            sel = codes == j
            obs[sel] = np.minimum(np.searchsorted(cumA[:, j], ua[sel], side="right"), m - 1)
        obs += 1
    states = states + 1
    if size is None:
        return states[0], obs[0]
    return states, obs


# ---------------------------------------------------------------------------
# testing affinity

class IIDDiscrete:
    """K independent draws from a distribution on 1..m."""

    def __init__(self, p):
        p = np.asarray(p, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise ValidationError("need a probability vector")
        self.p = p / p.sum()
        with np.errstate(divide="ignore"):
            self.logp = np.log(self.p)

    def sample(self, rng, K, N):
        cdf = np.cumsum(self.p)
        cdf /= cdf[-1]
        return np.minimum(np.searchsorted(cdf, rng.random((N, K)), side="right"), self.p.size - 1) + 1

    def loglik(self, obs):
        return self.logp[np.asarray(obs) - 1].sum(axis=-1)


class IIDCounts(IIDDiscrete):
    """Same model as :class:`IIDDiscrete`, sampled as category counts.

    The log-likelihood of K i.i.d. draws depends on the sequence only
    through its counts, so this costs O(N m) memory instead of O(N K).
    """

    def sample(self, rng, K, N):
        return rng.multinomial(K, self.p, size=N)

    def loglik(self, counts):
        counts = np.asarray(counts)
        with np.errstate(invalid="ignore"):
            terms = np.where(counts > 0, counts * self.logp, 0.0)
        return terms.sum(axis=-1)


@dataclass(frozen=True)
class AffinityEstimate:
    value: float
    se: float
    K: int
    N: int

    def ratio(self, eps_bound: float) -> float:
        """ln(estimate) / ln(eps_bound): at most this factor more observations
        than any test need a risk of ``value``."""
        if not 0 < eps_bound < 1:
            raise ValidationError("bound must lie in (0, 1)")
        if self.value <= 0:
            return math.inf
        return math.log(self.value) / math.log(eps_bound)

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se, "K": self.K, "N": self.N}


def _affinity_midpoint(m1: IIDDiscrete, m2: IIDDiscrete, K: int, N: int, rng) -> AffinityEstimate:
    """Importance sampling from q = sqrt(p1 p2) / Z per draw.

    min(p1^K, p2^K) / q^K = Z^K exp(-|LLR| / 2) <= Z^K, so the weights are
    bounded and rare-event targets keep a small relative error.
    """
    r = np.sqrt(m1.p * m2.p)
    Z = float(r.sum())
    if Z == 0.0:
        return AffinityEstimate(0.0, 0.0, int(K), int(N))
    q = r / Z
    qm = IIDCounts(q) if isinstance(m1, IIDCounts) or isinstance(m2, IIDCounts) else IIDDiscrete(q)
    obs = qm.sample(rng, K, N)
    if isinstance(qm, IIDCounts):
        d = IIDCounts(m2.p).loglik(obs) - IIDCounts(m1.p).loglik(obs)
    else:
        d = IIDDiscrete(m2.p).loglik(obs) - IIDDiscrete(m1.p).loglik(obs)
    scale = K * math.log(Z)
    v = np.exp(scale - 0.5 * np.abs(d))
    return AffinityEstimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), int(K), int(N))


def affinity_lower_bound(p1, p2, K: int, N: int, rng: np.random.Generator) -> AffinityEstimate:
    """Monte Carlo estimate of sum over omega^K of min(p1^K, p2^K).

    Models expose ``sample(rng, K, N)`` and ``loglik(obs)`` (probability
    vectors are wrapped as i.i.d. draws). Two i.i.d. discrete models are
    sampled from their normalized geometric midpoint, which keeps the
    weights bounded. Otherwise half the draws come from each model; under
    model a, min(1, p_b / p_a) has mean equal to the target.
    """
    m1 = p1 if hasattr(p1, "loglik") else IIDDiscrete(p1)
    m2 = p2 if hasattr(p2, "loglik") else IIDDiscrete(p2)
    if K < 1 or N < 2:
        raise ValidationError("need K >= 1 and N >= 2")
    if isinstance(m1, IIDDiscrete) and isinstance(m2, IIDDiscrete) and m1.p.size == m2.p.size:
        return _affinity_midpoint(m1, m2, K, N, rng)
    vals = []
    for a, b, n in ((m1, m2, N - N // 2), (m2, m1, N // 2)):
        obs = a.sample(rng, K, n)
        la = a.loglik(obs)
        if np.any(~np.isfinite(la)):
            raise ValidationError("zero-likelihood observation under its own model")
        with np.errstate(invalid="ignore"):
            d = b.loglik(obs) - la
        vals.append(np.exp(np.minimum(d, 0.0)))
    v = np.concatenate(vals)
    return AffinityEstimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), int(K), int(N))
