"""Smallest detectable amplitude per sensor location behind a convolution.

Prints, for every signature, the resolution of the aggregated test, the
lower bound no test can beat, and their ratio against the worst-case
factor kappa_n.
"""
import argparse
from dataclasses import dataclass

import numpy as np

from convexhyp.models.sensor import (DetectionSpec, convolution_matrix, rate_factor, second_difference_set,
                                     sensor_rate_profile)


@dataclass
class Config:
    kernel: tuple = (0.04, 0.096, 0.144, 0.128, 0.04)
    m: int = 8
    L: float = 0.1
    bound: float = 1.0
    R: float = 20.0
    eps: float = 0.01
    sigma: float = 0.1
    case: str = "gaussian"


def run(cfg: Config):
    A = convolution_matrix(np.asarray(cfg.kernel), cfg.m)
    n = A.shape[1]
    spec = DetectionSpec(A, second_difference_set(n, cfg.L, cfg.bound), np.eye(n), R=cfg.R, eps=cfg.eps,
                         sigma=cfg.sigma)
    return sensor_rate_profile(spec, cfg.case), rate_factor(cfg.eps, n, cfg.case)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--case", choices=("gaussian", "poisson"), default="gaussian")
    ap.add_argument("--eps", type=float, default=Config.eps)
    a = ap.parse_args()
    cfg = Config(case=a.case, eps=a.eps)
    prof, kappa = run(cfg)
    print("case=%s eps=%g kappa_n=%.4f" % (cfg.case, cfg.eps, kappa))
    print("%4s %12s %12s %8s" % ("i", "rho", "lower", "ratio"))
    for i, (r, b) in enumerate(zip(prof.rho, prof.baseline)):
        print("%4d %12.6g %12.6g %8.4f" % (i, r, b, r / b if np.isfinite(r) else np.inf))


if __name__ == "__main__":
    main()
