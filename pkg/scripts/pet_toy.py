"""Observation time needed to decide whether a hot spot in a PET image is brighter.

8x8 image, 16-detector ring, tracer densities with bounded discrete
Laplacian; the spot functional is the mean over a 3x3 block.
"""
import argparse
from dataclasses import dataclass

from convexhyp.models.pet import laplacian_class, pet_geometry, pet_plan, spot_functional


@dataclass
class Config:
    grid: int = 8
    arcs: int = 16
    rays: int = 10_000
    seed: int = 0
    L: float = 0.1
    R: float = 1.0
    top: int = 2
    left: int = 3
    alpha: float = 1.0
    rho: float = 0.1
    eps: float = 0.01


def run(cfg: Config):
    P, _ = pet_geometry(cfg.grid, cfg.arcs, cfg.rays, cfg.seed)
    return pet_plan(P, laplacian_class(cfg.grid, cfg.L, cfg.R), spot_functional(cfg.grid, cfg.top, cfg.left),
                    cfg.alpha, cfg.rho, cfg.eps)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rho", type=float, default=Config.rho)
    ap.add_argument("--eps", type=float, default=Config.eps)
    a = ap.parse_args()
    plan = run(Config(rho=a.rho, eps=a.eps))
    print("H=%.6g  t*=%.6g  (gap %.2g)" % (plan.H, plan.t_star, plan.gap))


if __name__ == "__main__":
    main()
