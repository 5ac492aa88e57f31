"""Telling two lazy random walks apart, directly or through binned states.

Hypotheses are entrywise cones around each walk's transition matrix. The
script solves the pair problem on observed transition pairs, prints eps*
and the number of transitions for risk 0.01, and checks the risk by
simulation at that horizon.
"""
import argparse
from dataclasses import dataclass

import numpy as np

from convexhyp.harness import estimate_risk, simulate_chain
from convexhyp.models.markov import (MarkovSpec, bin_matrix, common_support, entrywise_cones,
                                     markov_pair_problem, markov_Z_sets, random_walk_matrix)
from convexhyp.pairtest import repeated_plan, solve_pair

BINS = [[1, 8], [4, 6], [5, 7], [9, 11], [3, 10], [2, 15], [12, 16], [13, 14]]


@dataclass
class Config:
    n: int = 16
    p1: float = 0.2
    p2: float = 0.4
    cone: float = 0.1
    eps: float = 0.01
    reps: int = 5000
    seed: int = 1


def run(cfg: Config, indirect: bool):
    A = None
    if indirect:
        B = bin_matrix(BINS, cfg.n)
        A = np.kron(B, B)
    Ss = [random_walk_matrix(cfg.n, p) for p in (cfg.p1, cfg.p2)]
    Zs = [markov_Z_sets(MarkovSpec(S, A=A, cones=entrywise_cones(S, cfg.cone)), "transition-cones",
                        state_margin=1e-4) for S in Ss]
    Z1, Z2, idx = common_support(*Zs)
    sol = solve_pair(markov_pair_problem(Z1, Z2))
    T = repeated_plan(sol.eps_star, cfg.eps)
    table = np.zeros(cfg.n * cfg.n if A is None else A.shape[0])
    table[idx] = sol.detector.parts[0].table

    def test(batch):
        return np.where(table[batch[0] - 1].sum(axis=1) >= 0, 0, 1)

    def truth(S):
        return lambda rng, size: [simulate_chain(S, np.ones(cfg.n) / cfg.n, T, rng, A=A, size=size,
                                                 pairs=True)[1]]

    rep = estimate_risk(test, [truth(S) for S in Ss], N=cfg.reps, seed=cfg.seed, bound=cfg.eps)
    return sol, T, rep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=Config.reps)
    ap.add_argument("--seed", type=int, default=Config.seed)
    a = ap.parse_args()
    cfg = Config(reps=a.reps, seed=a.seed)
    for indirect in (False, True):
        sol, T, rep = run(cfg, indirect)
        print("%s: eps*=%.5f  transitions for risk %g: %d" % ("binned" if indirect else "direct",
                                                              sol.eps_star, cfg.eps, T))
        print(rep.table())


if __name__ == "__main__":
    main()
