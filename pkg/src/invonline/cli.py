"""Command-line front end.

Subcommands:
    run-consumer        learn the 10-product utility vector from price signals
    run-budget          learn the consumer's budget
    run-transshipment   learn two edge costs on the 5-node network
    solve-qp FILE       solve a concrete QP from a problem file
    validate-model FILE check regularity assumptions of a parameterized problem
    export-update FILE  write one implicit update as a big-M MIQP in LP format

Experiment runs write one trace CSV per repetition, an aggregate CSV, and a
plain-text summary into the output directory.  Exit codes: 0 success,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import experiments as ex
from . import fileio
from . import learner as ln
from . import qp as qpmod
from .loss import InfeasibleForward
from .model import ModelError, Observation, validate
from .update import InfeasibleUpdate

DEFAULT_ETA0 = {"consumer": 5.0, "budget": 100.0, "transshipment": 2.0}
_CONFIG_KEYS = ("T", "reps", "seed", "eta0", "start", "out_dir", "jobs",
                "warm_history")


def _fmt(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# experiment plumbing

def _one_rep(kind: str, rep_seed: int, T: int, eta0: float, start: str,
             warm_len: int):
    """Build scenario + stream for one repetition and run the online loop."""
    if kind in ("consumer", "budget"):
        scn = ex.ConsumerScenario.generate(rep_seed)
        if kind == "consumer":
            prob, box, theta_true = ex.consumer_problem_utility(scn)
        else:
            prob, box, theta_true = ex.consumer_problem_budget(scn)
        stream = ex.gen_consumer_stream(scn, T, rep_seed + 7919)
        theta0 = None                       # cold start at the box lower corner
        warm_src = lambda L: ex.gen_consumer_stream(scn, L, rep_seed + 104729)
        noise_dim = scn.n
    elif kind == "transshipment":
        scn = ex.TransshipmentScenario.generate(rep_seed)
        prob, box, theta_true = ex.transshipment_problem(scn)
        stream = ex.gen_transshipment_stream(scn, T, rep_seed + 7919)
        theta0 = 0.5 * (box.lo + box.hi)    # cold start at the box midpoint
        warm_src = lambda L: ex.gen_transshipment_stream(scn, L, rep_seed + 104729)
        noise_dim = prob.n
    else:
        raise ValueError(f"unknown experiment kind {kind!r}")
    cfg = ln.LearnerConfig(eta0=eta0, start=start, theta0=theta0,
                           warm_history=warm_src(warm_len) if start == "warm" else None)
    trace = ln.run(prob, box, stream, cfg, theta_true=theta_true)
    expected = scn.noise.expected_sq_norm(noise_dim)
    return trace, expected


def _write_aggregate(path, traces):
    T = traces[0].T
    losses = np.stack([tr.losses for tr in traces])
    cums = np.stack([tr.cum_loss_avg for tr in traces])
    errs = np.stack([tr.est_error for tr in traces])
    with open(path, "w", newline="") as f:
        f.write("t,mean_loss,mean_cum_loss_avg,mean_est_error,max_est_error\n")
        for t in range(1, T + 1):
            f.write(",".join([str(t), _fmt(losses[:, t - 1].mean()),
                              _fmt(cums[:, t - 1].mean()),
                              _fmt(errs[:, t].mean()), _fmt(errs[:, t].max())])
                    + "\n")


def _run_experiment(kind: str, args) -> int:
    out_dir = args.out_dir or os.environ.get("INVONLINE_OUT_DIR") \
        or os.path.join("invonline_out", f"run-{kind}")
    os.makedirs(out_dir, exist_ok=True)
    eta0 = args.eta0 if args.eta0 is not None else DEFAULT_ETA0[kind]
    t_start = time.perf_counter()
    traces = []
    expected = None
    for i in range(args.reps):
        trace, expected = _one_rep(kind, args.seed + i, args.T, eta0,
                                   args.start, args.warm_history)
        trace.to_csv(os.path.join(out_dir, f"rep{i:02d}.csv"))
        traces.append(trace)
    wall = time.perf_counter() - t_start
    _write_aggregate(os.path.join(out_dir, "aggregate.csv"), traces)

    window = min(200, args.T)
    tails = [float(np.mean(tr.losses[-window:])) for tr in traces]
    tail_mean = float(np.mean(tails))
    final_errs = [float(tr.est_error[-1]) for tr in traces]
    lines = [f"experiment: run-{kind}",
             f"T: {args.T}", f"reps: {args.reps}", f"seed: {args.seed}",
             f"eta0: {eta0!r}", f"start: {args.start}",
             f"final_window: last {window} rounds",
             f"final_window_avg_loss_mean: {tail_mean!r}",
             f"expected_noise_sq_norm: {expected!r}",
             f"relative_gap: {abs(tail_mean - expected) / expected!r}",
             f"final_est_error_mean: {float(np.mean(final_errs))!r}",
             "per_rep_final_window_avg_loss: " + json.dumps([repr(v) for v in tails]),
             "per_rep_final_est_error: " + json.dumps([repr(v) for v in final_errs]),
             f"total_wall_time_s: {wall:.1f}"]
    with open(os.path.join(out_dir, "summary.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"traces written to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# file subcommands

def _cmd_solve_qp(args) -> int:
    qp = fileio.load_qp(args.file)
    sol = qpmod.solve(qp)
    print("x:", json.dumps(sol.x.tolist()))
    print("u_ineq:", json.dumps(sol.u_ineq.tolist()))
    print("u_eq:", json.dumps(sol.u_eq.tolist()))
    print("active:", json.dumps(sol.active.tolist()))
    print("objective:", repr(sol.objective))
    print("kkt_residual:", repr(sol.kkt_residual))
    return 0


def _cmd_validate_model(args) -> int:
    prob, box, extras = fileio.load_problem(args.file)
    if box is None:
        raise fileio.ConfigError("validate-model needs box_lo/box_hi in the file")
    signals = extras.get("signals")
    signals = [np.zeros(prob.m)] if signals is None else \
        [np.asarray(s, dtype=float) for s in np.atleast_2d(np.asarray(signals, dtype=float))]
    report = validate(prob, box, signals)
    c = report.constants
    print(f"strongly_convex: {report.strongly_convex}")
    print(f"lambda: {c.lam!r}")
    print(f"B: {c.B!r}")
    print(f"R: {c.R!r}")
    print(f"kappa: {c.kappa!r}")
    print(f"D: {c.D!r}")
    for w in report.warnings:
        print(f"warning: {w}")
    return 0


def _cmd_export_update(args) -> int:
    prob, box, _ = fileio.load_problem(args.file)
    if box is None:
        raise fileio.ConfigError("export-update needs box_lo/box_hi in the file")
    theta_t = np.asarray(json.loads(args.theta_t), dtype=float)
    u = np.asarray(json.loads(args.u), dtype=float)
    y = np.asarray(json.loads(args.y), dtype=float)
    obs = Observation(u=u, y=y)
    fileio.export_bigm_mip(prob, box, theta_t, args.eta, obs, args.big_m, args.out)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_run_flags(sp):
    sp.add_argument("--T", type=int, default=None, help="rounds (default 1000)")
    sp.add_argument("--reps", type=int, default=None, help="repetitions (default 10)")
    sp.add_argument("--seed", type=int, default=None, help="base seed; rep i uses seed+i")
    sp.add_argument("--eta0", type=float, default=None,
                    help="learning-rate numerator (default per experiment)")
    sp.add_argument("--start", choices=("cold", "warm"), default=None)
    sp.add_argument("--warm-history", dest="warm_history", type=int, default=None,
                    help="history length for warm start (default 200)")
    sp.add_argument("--out-dir", dest="out_dir", default=None)
    sp.add_argument("--jobs", type=int, default=None,
                    help="accepted for interface compatibility; runs are sequential")
    sp.add_argument("--config", default=None,
                    help="key = value file overriding flag defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invonline",
        description="Online inverse optimization for parameterized convex QPs")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in ("consumer", "budget", "transshipment"):
        sp = sub.add_parser(f"run-{kind}")
        _add_run_flags(sp)
        sp.set_defaults(func=lambda a, k=kind: _run_experiment(k, a))
    sp = sub.add_parser("solve-qp")
    sp.add_argument("file")
    sp.set_defaults(func=_cmd_solve_qp)
    sp = sub.add_parser("validate-model")
    sp.add_argument("file")
    sp.set_defaults(func=_cmd_validate_model)
    sp = sub.add_parser("export-update")
    sp.add_argument("file")
    sp.add_argument("--theta-t", dest="theta_t", required=True,
                    help="JSON array, current hypothesis")
    sp.add_argument("--eta", type=float, required=True)
    sp.add_argument("--u", required=True, help="JSON array, signal")
    sp.add_argument("--y", required=True, help="JSON array, noisy decision")
    sp.add_argument("--big-m", dest="big_m", type=float, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_export_update)
    return parser


_RUN_DEFAULTS = {"T": 1000, "reps": 10, "seed": 0, "start": "cold",
                 "warm_history": 200, "jobs": 1}


def _apply_config_defaults(args):
    """Fill unset run flags from --config file values, then built-in defaults."""
    if not hasattr(args, "T"):
        return
    overrides = {}
    if args.config is not None:
        cfg = fileio.load_config(args.config)
        unknown = set(cfg) - set(_CONFIG_KEYS)
        if unknown:
            raise fileio.ConfigError(f"unknown config keys: {sorted(unknown)}")
        overrides = cfg
    for key, default in _RUN_DEFAULTS.items():
        if getattr(args, key) is None:
            setattr(args, key, overrides.get(key, default))
    if args.eta0 is None and "eta0" in overrides:
        args.eta0 = float(overrides["eta0"])
    if args.out_dir is None and "out_dir" in overrides:
        args.out_dir = str(overrides["out_dir"])
    if args.T < 1 or args.reps < 1:
        raise fileio.ConfigError("T and reps must be >= 1")
    if args.eta0 is not None and args.eta0 <= 0:
        raise fileio.ConfigError("eta0 must be positive")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:                 # argparse uses 2 for usage errors
        return int(e.code or 0)
    try:
        _apply_config_defaults(args)
        return args.func(args)
    except (fileio.ConfigError, ModelError, FileNotFoundError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except (qpmod.QpError, InfeasibleForward, InfeasibleUpdate,
            ln.NotStronglyConvex, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
