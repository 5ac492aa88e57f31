"""Distinguishing the number of servers when only the waiting line is seen.

Each hypothesis is an M/M/s/b queue observed through the queue beyond the
servers (states 0..s collapse to "no one waiting").
"""
import argparse
from dataclasses import dataclass

import numpy as np

from convexhyp.models.markov import (MarkovSpec, floor_channel, markov_pair_problem, markov_Z_sets,
                                     queueing_chain)
from convexhyp.pairtest import repeated_plan, solve_pair
from convexhyp.solver import FWConfig


@dataclass
class Config:
    lam: float = 40.0
    mu: float = 5.0
    buffer: int = 5
    s1: int = 10
    s2s: tuple = (9, 8, 7)
    eps: float = 0.01


def waiting_line(s, b):
    n = s + b + 1
    A = np.zeros((b + 1, n))
    for j in range(n):
        A[max(0, j - s), j] = 1
    return floor_channel(A)[0]


def run(cfg: Config):
    def Z(s):
        _, Q = queueing_chain(cfg.lam, cfg.mu, s, cfg.buffer)
        return markov_Z_sets(MarkovSpec(Q, 0.0, waiting_line(s, cfg.buffer)), "norm-ball")

    out = []
    for s2 in cfg.s2s:
        sol = solve_pair(markov_pair_problem(Z(cfg.s1), Z(s2)), FWConfig(max_iters=20000))
        out.append((s2, sol.eps_star, repeated_plan(sol.eps_star, cfg.eps)))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, default=Config.eps)
    cfg = Config(eps=ap.parse_args().eps)
    print("%4s %4s %10s %6s" % ("s1", "s2", "eps*", "K*"))
    for s2, e, k in run(cfg):
        print("%4d %4d %10.6f %6s" % (cfg.s1, s2, e, k))


if __name__ == "__main__":
    main()
