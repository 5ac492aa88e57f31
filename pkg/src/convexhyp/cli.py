"""Command-line entry point: ``convexhyp <command> SPEC.json [options]``.

Exit codes: 0 ok, 2 invalid input, 3 infeasible problem, 4 solver stopped
before its tolerance (results are still written).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import List, Optional

import numpy as np
from scipy import stats

from .errors import ConvexHypError, InfeasibleError, MarginViolation, NonConvergence, ValidationError
from .harness import estimate_risk, pair_labels, point_sampler
from .io import fmt6, load_spec, scheme_from_dict, scheme_to_dict, sets_from_dict, to_jsonable
from .multitest import (ClosenessRelation, DetectorMatrix, closeness_shifts, multiple_unions,
                        union_assemble)
from .pairtest import PairProblem, PairSolution, accepts_x, repeated_plan, solve_pair
from .schemes import read_observations
from .sets import singleton
from .solver import FWConfig

__all__ = ["main", "run", "load_solution"]

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_NONCONV = 0, 2, 3, 4

_COMMANDS = {
    "solve-pair": ("pair", "simulate"),
    "aggregate": ("union", "multitest", "multiple-unions"),
    "markov-plan": ("markov",),
    "sensor-rates": ("sensor",),
    "resolve": ("functional",),
    "simulate": ("simulate", "pair"),
    "pet-plan": ("pet",),
}

_TARGETS = (0.1, 0.05, 0.01, 0.001)


class _Out:
    """Collects the summary lines, the JSON payload and any files to write."""

    def __init__(self):
        self.lines: List[str] = []
        self.payload: dict = {}
        self.converged = True

    def kv(self, key, val):
        self.lines.append("%s=%s" % (key, fmt6(val)))

    def table(self, header, rows):
        self.lines.append("  ".join("%12s" % h for h in header))
        for r in rows:
            self.lines.append("  ".join("%12s" % fmt6(v) for v in r))


def _cfg(spec, args) -> FWConfig:
    kw = {}
    gt = args.gap_tol if args.gap_tol is not None else spec.get("gap_tol")
    mi = args.max_iters if args.max_iters is not None else spec.get("max_iters")
    if gt is not None:
        kw["gap_tol"] = float(gt)
    if mi is not None:
        kw["max_iters"] = int(mi)
    if spec.get("method"):
        kw["method"] = spec["method"]
    return FWConfig(**kw)


def _pair(spec, args, xname="X", yname="Y"):
    scheme = scheme_from_dict(spec["scheme"])
    sets = sets_from_dict(spec["sets"])
    return solve_pair(PairProblem(scheme, sets[xname], sets[yname]), _cfg(spec, args)), scheme


def load_solution(path) -> PairSolution:
    """Re-load a solution written by ``solve-pair``."""
    with open(path) as fh:
        d = json.load(fh)
    scheme = scheme_from_dict(d["scheme"])
    return PairSolution.from_dict(scheme, d["solution"])


def _cmd_solve_pair(spec, args, out: _Out):
    sol, scheme = _pair(spec, args)
    out.converged = sol.converged
    out.kv("eps_star", sol.eps_star)
    out.kv("opt", sol.opt)
    out.kv("gap", sol.gap)
    out.kv("certified_eps", sol.certified_eps)
    # the per-observation bound that multiplies over repeats (the Gaussian
    # Erf bound does not)
    per_obs = min(1.0, sol.eps_star * math.exp(max(sol.gap_x, sol.gap_y)))
    rows = [(t, repeated_plan(per_obs, t)) for t in _TARGETS]
    out.table(("target", "K_min"), rows)
    out.payload = {"scheme": scheme_to_dict(scheme), "solution": sol.to_dict(),
                   "K_min": {str(t): k for t, k in rows}}
    obs_path = args.obs or spec.get("observations")
    if obs_path:
        batch = read_observations(obs_path, scheme)
        dec = np.where(accepts_x(sol, batch), "X", "Y").tolist()
        out.payload["decisions"] = dec
        out.lines.append("decisions=" + "".join(dec))


def _cmd_simulate(spec, args, out: _Out):
    sol, scheme = _pair(spec, args)
    out.converged = sol.converged
    truth = spec.get("truth", {})
    mx = np.asarray(truth.get("X", sol.x_star), dtype=float)
    my = np.asarray(truth.get("Y", sol.y_star), dtype=float)
    N = args.reps or int(spec.get("reps", 5000))
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    rep = estimate_risk(pair_labels(sol), [point_sampler(scheme, mx), point_sampler(scheme, my)],
                        N=N, seed=seed, bound=sol.certified_eps, names=("X", "Y"))
    out.kv("eps_star", sol.eps_star)
    out.lines.append(rep.table())
    out.kv("complies", int(rep.complies()))
    out.payload = {"solution": sol.to_dict(), "report": rep.to_dict()}


def _solve_all(spec, args, names):
    scheme = scheme_from_dict(spec["scheme"])
    sets = sets_from_dict(spec["sets"])
    cfg = _cfg(spec, args)
    sols = {}
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            sols[(i, j)] = solve_pair(PairProblem(scheme, sets[names[i]], sets[names[j]]), cfg)
    return sols


def _cmd_aggregate(spec, args, out: _Out):
    task = spec["task"]
    if task == "union":
        scheme = scheme_from_dict(spec["scheme"])
        sets = sets_from_dict(spec["sets"])
        cfg = _cfg(spec, args)
        gx, gy = spec["groups"]["X"], spec["groups"]["Y"]
        E = np.zeros((len(gx), len(gy)))
        dets = []
        for i, a in enumerate(gx):
            row = []
            for j, b in enumerate(gy):
                s = solve_pair(PairProblem(scheme, sets[a], sets[b]), cfg)
                out.converged &= s.converged
                E[i, j] = s.eps_star
                row.append(s.detector)
            dets.append(row)
        u = union_assemble(E, dets)
        out.kv("spectral_norm", u.eps)
        out.lines.append("E:")
        out.table([""] + gy, [[a] + list(E[i]) for i, a in enumerate(gx)])
        out.lines.append("shifts a_ij:")
        out.table([""] + gy, [[a] + list(u.a[i]) for i, a in enumerate(gx)])
        out.payload = {"E": E, "union": u.to_dict()}
        return
    names = spec["hypotheses"]
    M = len(names)
    sols = _solve_all(spec, args, names)
    out.converged = all(s.converged for s in sols.values())
    dm = DetectorMatrix.from_solutions(M, sols)
    out.lines.append("E:")
    out.table([""] + names, [[n] + list(dm.risks[i]) for i, n in enumerate(names)])
    if task == "multitest":
        pairs = [(i - 1, j - 1) for i, j in spec.get("closeness", [])]
        for i, j in pairs:
            if not (0 <= i < M and 0 <= j < M):
                raise ValidationError("closeness pair (%d, %d) outside 1..%d" % (i + 1, j + 1, M))
        C = ClosenessRelation(M, pairs)
        sh = closeness_shifts(dm.risks, C)
        out.kv("eps", sh.eps)
        out.kv("lower", sh.lower)
        out.kv("gap", sh.gap)
        out.lines.append("shifts alpha_ij:")
        out.table([""] + names, [[n] + list(sh.alpha[i]) for i, n in enumerate(names)])
        out.payload = {"E": dm.risks, "shifts": sh.to_dict()}
    else:
        blocks = [[i - 1 for i in b] for b in spec["blocks"]]
        res = multiple_unions(blocks, dm)
        out.kv("eps", res.eps)
        out.kv("eps_two_stage", res.eps_two_stage)
        out.kv("shifted_risk", res.shifts.eps)
        out.payload = {"E": dm.risks, "result": res.to_dict()}


def _chain(c):
    from .models.markov import queueing_chain, random_walk_matrix
    kind = c.get("type", "matrix")
    if kind == "queue":
        return queueing_chain(float(c["lam"]), float(c["mu"]), int(c["s"]), int(c["b"]))[1]
    if kind == "random-walk":
        return random_walk_matrix(int(c["n"]), float(c["p"]))
    if kind == "matrix":
        return np.asarray(c["S"], dtype=float)
    raise ValidationError("unknown chain type %r" % kind)


def _cmd_markov(spec, args, out: _Out):
    from .models.markov import markov_pair_plan
    S1, S2 = (_chain(c) for c in spec["chains"])
    target = float(spec.get("eps_target", 0.01))
    plan = markov_pair_plan(S1, S2, eps_target=target, K_max=int(spec.get("K_max", 100_000)))
    if plan.K_min is None:
        out.converged = False
    out.lines.append("K_min=%s" % (plan.K_min if plan.K_min is not None else "none"))
    show = list(range(1, len(plan.curve) + 1))
    if len(show) > 20:
        show = sorted(set(show[:10] + show[-10:]))
    out.table(("K", "eps_star(K)"), [(k, plan.curve[k - 1]) for k in show])
    out.payload = {"K_min": plan.K_min, "curve": plan.curve, "initial": plan.initial}


def _cmd_sensor(spec, args, out: _Out):
    from .models.sensor import (DetectionSpec, convolution_matrix, second_difference_set,
                                sensor_rate_profile)
    s = spec["sensor"]
    if "A" in s:
        A = np.asarray(s["A"], dtype=float)
    elif "kernel" in s:
        A = convolution_matrix(np.asarray(s["kernel"], dtype=float), int(s["m"]))
    else:
        raise ValidationError("sensor needs 'A' or 'kernel' and 'm'")
    n = A.shape[1]
    sig = s.get("signatures", "identity")
    E = np.eye(n) if sig == "identity" else np.asarray(sig, dtype=float)
    nu = s.get("nuisance", {"type": "zero"})
    if nu["type"] == "zero":
        V = singleton(np.zeros(n))
    elif nu["type"] == "second-difference":
        V = second_difference_set(n, float(nu["L"]), float(nu["bound"]))
    else:
        raise ValidationError("unknown nuisance type %r" % nu["type"])
    ds = DetectionSpec(A, V, E, float(s["R"]), float(s.get("eps", spec.get("eps", 0.01))),
                       float(s.get("sigma", 1.0)))
    prof = sensor_rate_profile(ds, s.get("case", "gaussian"))
    out.kv("kappa", prof.kappa)
    rows = [(i + 1, r, b, r / b if np.isfinite(r) and b > 0 else None)
            for i, (r, b) in enumerate(zip(prof.rho, prof.baseline))]
    out.table(("i", "rho", "rho_star", "ratio"), rows)
    out.payload = prof.to_dict()


def _channel(d):
    from .models.functional import deconvolution_channel, signal_grid, trimmed_channel
    if "matrix" in d:
        return np.asarray(d["matrix"], dtype=float)
    noise = d["noise"]
    dist = getattr(stats, noise.get("dist", "norm"), None)
    if dist is None:
        raise ValidationError("unknown noise distribution %r" % noise.get("dist"))
    nd = dist(loc=float(noise.get("loc", 0.0)), scale=float(noise.get("scale", 1.0)))
    a, _ = signal_grid(int(d["n"]), float(d.get("lo", -1.0)), float(d.get("hi", 1.0)))
    if d.get("type", "deconvolution") == "trimmed":
        return trimmed_channel(nd, a)
    return deconvolution_channel(nd, a, d.get("obs_edges"), d.get("n_interior"), d.get("delta"))


def _cmd_resolve(spec, args, out: _Out):
    from .models.functional import FunctionalSpec, functional_resolution
    f = spec["functional"]
    chans = [_channel(c) for c in f["channels"]]
    K = f.get("K", [1] * len(chans))
    g = f["g"]
    if isinstance(g, dict):
        # bin midpoints (mean of the signal) or the indicator of midpoints <= t
        n = chans[0].shape[1]
        a = np.linspace(float(g.get("lo", -1.0)), float(g.get("hi", 1.0)), n + 1)
        mids = 0.5 * (a[:-1] + a[1:])
        g = mids if "t" not in g else (mids <= float(g["t"])).astype(float)
    fs = FunctionalSpec(tuple(chans), tuple(K), np.asarray(g, dtype=float), float(f["alpha"]))
    eps = float(f.get("eps", spec.get("eps", 0.01)))
    res = functional_resolution(fs, eps, _cfg(spec, args))
    out.converged = res.solution.converged
    out.kv("rho", res.rho)
    out.kv("rho_max", res.rho_max)
    out.kv("theta", res.theta)
    out.kv("degenerate", int(res.degenerate))
    out.payload = res.to_dict()


def _cmd_pet(spec, args, out: _Out):
    from .models.pet import laplacian_class, pet_geometry, pet_plan, spot_functional
    p = spec["pet"]
    grid = int(p.get("grid", 8))
    P, pairs = pet_geometry(grid, int(p.get("arcs", 16)), int(p.get("rays", 10_000)),
                            int(args.seed if args.seed is not None else p.get("seed", 0)))
    Lam = laplacian_class(grid, float(p["L"]), float(p["R"]), float(p.get("margin", 1e-3)))
    sp = p.get("spot", {})
    g = spot_functional(grid, int(sp.get("top", 2)), int(sp.get("left", 3)), int(sp.get("size", 3)))
    plan = pet_plan(P, Lam, g, float(p["alpha"]), float(p["rho"]), float(p.get("eps", spec.get("eps", 0.01))),
                    _cfg(spec, args))
    out.kv("t_star", plan.t_star)
    out.kv("H", plan.H)
    out.kv("gap", plan.gap)
    for name, lam in (("lambda1", plan.lam1), ("lambda2", plan.lam2)):
        out.lines.append(name + ":")
        out.table(["col%d" % (c + 1) for c in range(grid)], lam.reshape(grid, grid).tolist())
    out.payload = plan.to_dict()
    out.payload["pairs"] = pairs


_HANDLERS = {
    "solve-pair": _cmd_solve_pair,
    "aggregate": _cmd_aggregate,
    "markov-plan": _cmd_markov,
    "sensor-rates": _cmd_sensor,
    "resolve": _cmd_resolve,
    "simulate": _cmd_simulate,
    "pet-plan": _cmd_pet,
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="convexhyp", description="Tests of convex composite hypotheses.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in _HANDLERS:
        p = sub.add_parser(name)
        p.add_argument("spec_file", nargs="?", help="problem spec (JSON)")
        p.add_argument("--spec", dest="spec_opt", help="problem spec (JSON)")
        p.add_argument("--out", help="directory for result artifacts")
        p.add_argument("--seed", type=int)
        p.add_argument("--reps", type=int)
        p.add_argument("--gap-tol", type=float)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--format", choices=("json", "table"), default="table")
        p.add_argument("--obs", help="observation file to decide on (solve-pair)")
    return ap


def _write_csv(directory, stem, payload) -> None:
    """Numeric vectors and matrices of the payload as ``<stem>_<key>.csv``."""
    for key, val in payload.items():
        if isinstance(val, np.ndarray) and val.ndim in (1, 2) and val.dtype.kind in "fiu":
            np.savetxt(os.path.join(directory, "%s_%s.csv" % (stem, key)), np.atleast_2d(val) if val.ndim == 1
                       else val, delimiter=",", fmt="%.17g")


def run(argv: Optional[List[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = _parser().parse_args(argv)
    path = args.spec_opt or args.spec_file
    try:
        if not path:
            raise ValidationError("no spec file given")
        if args.seed is not None and args.seed < 0:
            raise ValidationError("--seed must be nonnegative")
        spec = load_spec(path)
        if spec["task"] not in _COMMANDS[args.command]:
            raise ValidationError("command %s does not run task %r" % (args.command, spec["task"]))
        out = _Out()
        _HANDLERS[args.command](spec, args, out)
    except (ValidationError, MarginViolation) as exc:
        print("error: %s" % exc, file=stderr)
        return EXIT_INVALID
    except InfeasibleError as exc:
        print("infeasible: %s" % exc, file=stderr)
        return EXIT_INFEASIBLE
    except NonConvergence as exc:
        print("not converged: %s" % exc, file=stderr)
        return EXIT_NONCONV
    except ConvexHypError as exc:
        print("error: %s" % exc, file=stderr)
        return EXIT_INVALID
    payload = to_jsonable(dict(out.payload, command=args.command, spec_version=1, converged=out.converged))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        stem = args.command.replace("-", "_")
        with open(os.path.join(args.out, stem + ".json"), "w") as fh:
            json.dump(payload, fh, indent=1)
        _write_csv(args.out, stem, out.payload)
    if args.format == "json":
        json.dump(payload, stdout)
        stdout.write("\n")
    else:
        stdout.write("\n".join(out.lines) + "\n")
    if not out.converged:
        print("warning: solver stopped before reaching its tolerance", file=stderr)
        return EXIT_NONCONV
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
