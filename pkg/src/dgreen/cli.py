"""Batch CLI: parse a problem file, run the pipeline, emit reports,
trajectories and figures.

Exit codes: 0 success, 1 input error (bad file/flags), 2 mathematical
failure (no dichotomy, no root, divergence).  Verbosity via the
DGREEN_LOG environment variable (DEBUG/INFO/WARNING/ERROR).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .dichotomy import verify_dichotomy
from .exceptions import MathematicalError, ProblemFormatError
from .green import (
    diff_residual,
    jump_check,
    rhs_g,
    sample_bounded_family,
    solvability_residual,
    tail_bound,
)
from .nonlinear import iterate_solution, perturbed_residual, solve_generating
from .operator_core import regime_classify
from .oracle import bvp_solve, compare
from .pipeline import ProblemSetup, build_setup
from .problem import parse_problem
from .trajectory import Trajectory, _jsonable, write_csv, write_json

log = logging.getLogger(__name__)

COMMANDS = (
    "check-dichotomy",
    "solvability",
    "solve-linear",
    "solve-nonlinear",
    "oracle-compare",
    "regime",
)

TOL_MARGIN = 1e-6  # case-2 proximity threshold on the smallest retained singular value


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # input errors exit 1, not argparse's 2
        raise ProblemFormatError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dgreen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--problem", required=True, help="problem JSON file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--t-cut", type=float, default=None, help="override grid.t_cut")
        p.add_argument("--step", type=float, default=None, help="override grid.h")
        p.add_argument("--eps", type=float, default=None, help="override nonlinearity.eps")
        p.add_argument("--max-iter", type=int, default=None, help="override iteration cap")
        p.add_argument("--workers", type=int, default=1, help="worker threads for sampling")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="trajectory file format")
        p.add_argument("--samples", type=int, default=12,
                       help="sample count for dichotomy verification")
        p.add_argument("--no-plot", action="store_true", help="skip figure rendering")
    return parser


def _report(out: Path, setup: ProblemSetup, command: str, results: dict) -> None:
    doc = {
        "command": command,
        "problem": setup.spec.name,
        "hash": setup.spec.problem_hash,
        "tolerances": setup.spec.tolerances,
        "grid": setup.spec.grid,
        "results": _jsonable(results),
    }
    with open(out / "report.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_trajectory(traj: Trajectory, out: Path, fmt: str) -> Path:
    path = out / ("trajectory.csv" if fmt == "csv" else "trajectory.json")
    (write_csv if fmt == "csv" else write_json)(traj, path)
    return path


def _output_times(setup: ProblemSetup) -> np.ndarray:
    t_max = float(setup.spec.output["t_max"])
    step = float(setup.spec.output["step"])
    count = int(round(2.0 * t_max / step))
    return -t_max + step * np.arange(count + 1)


def _diff_sample(setup: ProblemSetup) -> np.ndarray:
    t_max = float(setup.spec.output["t_max"])
    pts = t_max * np.array([0.15, 0.4, 0.65, 0.9])
    return np.concatenate([-pts[::-1], pts])


def _cmd_check_dichotomy(setup: ProblemSetup, args, out: Path) -> int:
    results = {}
    failed = []
    for side, dich in (("plus", setup.dich_plus), ("minus", setup.dich_minus)):
        res = verify_dichotomy(setup.family, dich.P0, side, samples=args.samples)
        results[side] = {
            "ok": res.ok,
            "M_est": res.M_est,
            "alpha_est": res.alpha_est,
            "worst_pair": list(res.worst_pair),
            "invariance_err": res.invariance_err,
        }
        print(
            f"{side:5s}: ok={res.ok}  M={res.M_est:.4g}  alpha={res.alpha_est:.4g}  "
            f"worst=({res.worst_pair[0]:.3g}, {res.worst_pair[1]:.3g})"
        )
        if not res.ok:
            failed.append(side)
    _report(out, setup, "check-dichotomy", results)
    if failed:
        print(f"no dichotomy on half-line(s): {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


def _cmd_solvability(setup: ProblemSetup, args, out: Path) -> int:
    ctx, f = setup.ctx, setup.forcing
    r, rnorm = solvability_residual(ctx, f)
    g = rhs_g(ctx, f)
    tol = setup.spec.tolerances["tol_solve"] + tail_bound(ctx, f)
    regime = regime_classify(ctx.pinv, g, tol, TOL_MARGIN)
    print(f"||r|| = {rnorm:.6e}")
    print(f"verdict: {regime.label()}  (rhs residual {regime.residual_norm:.3e})")
    _report(out, setup, "solvability", {
        "residual_norm": rnorm,
        "residual": r,
        "verdict": regime.label(),
        "rhs_residual": regime.residual_norm,
        "margin_flagged": regime.margin_flagged,
    })
    return 0


def _cmd_solve_linear(setup: ProblemSetup, args, out: Path) -> int:
    ctx, f, spec = setup.ctx, setup.forcing, setup.spec
    times = _output_times(setup)
    traj = sample_bounded_family(
        ctx, f, spec.output["c"], times,
        workers=args.workers, tol_solve=spec.tolerances["tol_solve"],
    )
    traj.meta.update({"problem": spec.name, "hash": spec.problem_hash,
                      "tolerances": spec.tolerances})
    _, _, jump_err = jump_check(ctx, f)
    dres = diff_residual(ctx, f, _diff_sample(setup))
    print(f"jump identity error    : {jump_err:.3e}")
    print(f"differential residual  : {dres:.3e}")
    print(f"regime                 : {traj.meta['regime']}")
    path = _write_trajectory(traj, out, args.format)
    print(f"trajectory written to {path}")
    if not args.no_plot:
        from .plots import trajectory_figure
        trajectory_figure(traj, out / "trajectory.png", title=spec.name)
    _report(out, setup, "solve-linear", {
        "jump_error": jump_err,
        "diff_residual": dres,
        "regime": traj.meta["regime"],
        "solvability_residual": traj.meta["solvability_residual"],
        "max_norm": traj.max_norm(),
    })
    return 0


def _cmd_solve_nonlinear(setup: ProblemSetup, args, out: Path) -> int:
    spec = setup.spec
    if setup.nonlinearity is None:
        raise ProblemFormatError("problem file has no nonlinearity section")
    ctx, f, z = setup.ctx, setup.forcing, setup.nonlinearity
    cfg = spec.nonlinearity
    eps = args.eps if args.eps is not None else float(cfg.get("eps", 0.01))
    max_iter = args.max_iter if args.max_iter is not None else int(cfg.get("max_iter", 60))
    c_init = cfg.get("c_init", np.zeros(spec.n, dtype=complex))

    root = solve_generating(ctx, z, f, c_init, tol_root=spec.tolerances["tol_root"])
    print(f"generating constants   : {root.c0}")
    print(f"||F(c0)||              : {root.F_norm_at_root:.3e}"
          + (f"  [{root.note}]" if root.note else ""))
    print(f"B0 rank                : {root.B0_rank}")
    print(f"sufficient condition   : {root.sufficient_ok}")
    print(f"||B0 - F'(c0)||        : {root.frechet_match_err:.3e}")

    traj, history = iterate_solution(
        ctx, z, f, root, eps=eps, max_iter=max_iter,
        tol_fix=spec.tolerances["tol_fix"],
    )
    for st in history:
        print(f"  k={st.k:3d}  correction={st.correction_norm:.3e}")
    sample = _diff_sample(setup)
    ode_res = perturbed_residual(ctx, z, f, root, traj, eps, sample)
    print(f"ODE residual of limit  : {ode_res:.3e}")

    mask = np.abs(traj.times) <= float(spec.output["t_max"]) + 1e-12
    out_traj = Trajectory(traj.times[mask], traj.values[mask], dict(traj.meta))
    out_traj.meta.update({"problem": spec.name, "hash": spec.problem_hash,
                          "tolerances": spec.tolerances})
    path = _write_trajectory(out_traj, out, args.format)
    print(f"trajectory written to {path}")
    if not args.no_plot:
        from .plots import convergence_figure, trajectory_figure
        trajectory_figure(out_traj, out / "trajectory.png", title=f"{spec.name} (eps={eps})")
        convergence_figure([st.correction_norm for st in history], out / "convergence.png")
    _report(out, setup, "solve-nonlinear", {
        "c0": root.c0,
        "F_norm_at_root": root.F_norm_at_root,
        "B0_rank": root.B0_rank,
        "sufficient_ok": root.sufficient_ok,
        "frechet_match_err": root.frechet_match_err,
        "eps": eps,
        "iterations": len(history),
        "corrections": [st.correction_norm for st in history],
        "ode_residual": ode_res,
        "final_consistency": traj.meta["final_consistency"],
    })
    return 0


def _cmd_oracle_compare(setup: ProblemSetup, args, out: Path) -> int:
    spec = setup.spec
    ctx, f = setup.ctx, setup.forcing
    bvp = bvp_solve(
        setup.family, setup.dich_plus, setup.dich_minus, f,
        T=float(spec.oracle["T"]), h=float(spec.oracle["h"]), c=spec.output["c"],
    )
    # sample the Green solution on the BVP's own nodes so the comparison
    # is method versus method, not cross-grid interpolation
    t_max = float(spec.output["t_max"])
    times = bvp.trajectory.times[np.abs(bvp.trajectory.times) <= t_max]
    green_traj = sample_bounded_family(
        ctx, f, spec.output["c"], times,
        workers=args.workers, tol_solve=spec.tolerances["tol_solve"],
    )
    max_err, at_t = compare(green_traj, bvp.trajectory)
    print(f"max |green - bvp|      : {max_err:.3e} at t = {at_t:.3g}")
    print(f"bvp boundary residual  : {bvp.boundary_residual:.3e}")
    print(f"bvp condition number   : {bvp.condition_number:.3e}")
    if not args.no_plot:
        from .plots import comparison_figure
        comparison_figure(green_traj, bvp.trajectory, out / "comparison.png",
                          labels=("green", "bvp"))
    _report(out, setup, "oracle-compare", {
        "max_err": max_err,
        "at_t": at_t,
        "bvp_boundary_residual": bvp.boundary_residual,
        "bvp_condition_number": bvp.condition_number,
    })
    return 0


def _cmd_regime(setup: ProblemSetup, args, out: Path) -> int:
    ctx, f, spec = setup.ctx, setup.forcing, setup.spec
    g = rhs_g(ctx, f)
    tol = spec.tolerances["tol_solve"] + tail_bound(ctx, f)
    regime = regime_classify(ctx.pinv, g, tol, TOL_MARGIN)
    cases = {"classical": "case 1 (classical solutions)",
             "ill_posed_margin": "case 2 proximity (ill-posedness margin)",
             "pseudosolution": "case 3 (pseudosolutions)"}
    print(f"rank(D) = {ctx.pinv.rank} of {ctx.n}")
    print(f"ill-posedness margin   : {ctx.pinv.ill_posedness_margin:.3e}")
    print(f"residual ||P_coker g|| : {regime.residual_norm:.3e}")
    print(f"classification         : {cases[regime.label()]}")
    _report(out, setup, "regime", {
        "rank": ctx.pinv.rank,
        "ill_posedness_margin": ctx.pinv.ill_posedness_margin,
        "residual_norm": regime.residual_norm,
        "label": regime.label(),
        "margin_flagged": regime.margin_flagged,
    })
    return 0


_DISPATCH = {
    "check-dichotomy": _cmd_check_dichotomy,
    "solvability": _cmd_solvability,
    "solve-linear": _cmd_solve_linear,
    "solve-nonlinear": _cmd_solve_nonlinear,
    "oracle-compare": _cmd_oracle_compare,
    "regime": _cmd_regime,
}


def main(argv=None) -> int:
    level = os.environ.get("DGREEN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _build_parser().parse_args(argv)
        spec = parse_problem(args.problem)
        setup = build_setup(spec, t_cut=args.t_cut, h=args.step)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _DISPATCH[args.command](setup, args, out)
    except ProblemFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except MathematicalError as exc:
        print(f"mathematical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
