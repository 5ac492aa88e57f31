"""How conservative is the deconvolution test?

For each number of observations K and target risk eps, the resolution rho[eps]
is found, and the two extreme latent distributions it produces define two
simple hypotheses. No test on those can beat the Monte Carlo estimate of
sum min(p1^K, p2^K). The ratio ln(estimate) / ln(eps) bounds how many times
more observations the test needs than an ideal one.
"""
import argparse
from dataclasses import dataclass

import numpy as np
from scipy import stats

from convexhyp.harness import IIDCounts, affinity_lower_bound
from convexhyp.models.functional import FunctionalSpec, deconvolution_channel, functional_resolution, signal_grid


@dataclass
class Config:
    n: int = 20
    noise_scale: float = 0.1
    n_interior: int = 38
    delta: float = 0.01
    t: float = 0.0
    alpha: float = 0.5
    Ks: tuple = (200, 500, 1000, 2000)
    targets: tuple = (0.1, 0.01, 0.001, 1e-4)
    N: int = 100_000
    seed: int = 0


def run(cfg: Config):
    a, _ = signal_grid(cfg.n)
    A = deconvolution_channel(stats.laplace(scale=cfg.noise_scale), a, n_interior=cfg.n_interior,
                              delta=cfg.delta)
    g = (0.5 * (a[:-1] + a[1:]) <= cfg.t).astype(float)
    rng = np.random.default_rng(cfg.seed)
    cells = {}
    for K in cfg.Ks:
        for eps in cfg.targets:
            res = functional_resolution(FunctionalSpec((A,), (K,), g, cfg.alpha), eps)
            s = res.solution
            est = affinity_lower_bound(IIDCounts(s.x_star), IIDCounts(s.y_star), K, cfg.N, rng)
            cells[K, eps] = (res.rho, est, est.ratio(s.eps_star))
    return cells


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=Config.N)
    ap.add_argument("--seed", type=int, default=Config.seed)
    a = ap.parse_args()
    cfg = Config(N=a.N, seed=a.seed)
    cells = run(cfg)
    print("eps \\ K " + "".join("%18d" % K for K in cfg.Ks))
    for eps in cfg.targets:
        print("%-8g" % eps + "".join("%18s" % ("%.1e (r=%.2f)" % (cells[K, eps][1].value, cells[K, eps][2]))
                                      for K in cfg.Ks))


if __name__ == "__main__":
    main()
