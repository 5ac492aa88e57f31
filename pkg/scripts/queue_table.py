"""Observation counts needed to tell two M/M/s/b queues apart from the queue length.

Prints K_min (risk 0.01) for a reference service rate against a range of
alternatives, plus the risk curve up to K_min.
"""
import argparse
import time
from dataclasses import dataclass

from convexhyp.models.markov import markov_pair_plan, queueing_chain


@dataclass
class Config:
    lam: float = 50.0
    mu1: float = 1.0
    mu2s: tuple = (0.5, 2.0, 0.75, 4 / 3, 0.9, 10 / 9)
    servers: int = 100
    buffer: int = 20
    eps: float = 0.01


def run(cfg: Config):
    _, S1 = queueing_chain(cfg.lam, cfg.mu1, cfg.servers, cfg.buffer)
    rows = []
    for mu2 in cfg.mu2s:
        t = time.perf_counter()
        _, S2 = queueing_chain(cfg.lam, mu2, cfg.servers, cfg.buffer)
        plan = markov_pair_plan(S1, S2, eps_target=cfg.eps)
        rows.append((mu2, plan.K_min, plan.curve[0], time.perf_counter() - t))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lam", type=float, default=Config.lam)
    ap.add_argument("--eps", type=float, default=Config.eps)
    a = ap.parse_args()
    cfg = Config(lam=a.lam, eps=a.eps)
    print("lambda=%g mu1=%g s=%d b=%d eps=%g" % (cfg.lam, cfg.mu1, cfg.servers, cfg.buffer, cfg.eps))
    print("%8s %8s %12s %8s" % ("mu2", "K_min", "eps[1]", "sec"))
    for mu2, k, e1, sec in run(cfg):
        print("%8.4f %8s %12.6f %8.2f" % (mu2, k, e1, sec))


if __name__ == "__main__":
    main()
