"""Command line entry point: ``enkf1d simulate | experiment | report``.

Exit codes: 0 success, 1 at least one failed verdict, 2 invalid input
(bad parameters, unknown experiment, missing or empty results directory).
The output directory defaults to ``./results`` and can be overridden by the
``ENKF1D_OUTPUT_DIR`` environment variable or ``--output-dir``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import __version__
from .enkf import run_enkf
from .errors import ConfigError, EnKFLabError, UnknownExperiment
from .experiments.config import build_config, read_config_file
from .experiments.harness import block_rng
from .experiments.result import fmt_float, read_summary
from .experiments.suite import EXPERIMENTS, get_config, run_experiment
from .kalman import run_kalman
from .model import simulate_trajectory

ENV_OUTPUT = "ENKF1D_OUTPUT_DIR"
SIMULATE_COLUMNS = ("n", "X", "Y", "m", "p", "g", "m_hat", "p_hat", "P", "P_hat", "G", "M")
SIMULATE_DEFAULTS = dict(N=(10,), horizon=20)


def _output_dir(arg) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(ENV_OUTPUT, "results"))


def _fail(msg: str, code: int = 2) -> int:
    print(f"enkf1d: error: {msg}", file=sys.stderr)
    return code


def _parse_sets(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


# --- simulate -----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    overrides = {}
    for key in ("A", "B", "C", "D", "x0_mean", "p0", "horizon", "seed"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    if args.N is not None:
        overrides["N"] = (args.N,)
    try:
        top, sections = read_config_file(args.config) if args.config else ({}, {})
        cfg = build_config("simulate", SIMULATE_DEFAULTS, top, sections.get("simulate"), overrides)
    except (ConfigError, ValueError) as exc:
        return _fail(str(exc))
    params, N, H = cfg.model, int(cfg.N[0]), int(cfg.horizon)
    rng = block_rng(cfg.seed, "simulate")
    traj = simulate_trajectory(params, H, rng)
    rec = run_enkf(params, traj, N, rng)
    kf = run_kalman(params, traj.observations)

    keep = ("A", "B", "C", "D", "x0_mean", "p0", "N", "horizon", "seed")
    resolved = {k: v for k, v in cfg.resolved().items() if k in keep}
    buf = io.StringIO()
    buf.write(f"# enkf1d {__version__}\n# command simulate\n# seed {cfg.seed}\n")
    for k, v in sorted(resolved.items()):
        buf.write(f"# config {k} = {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SIMULATE_COLUMNS)
    cols = (traj.states, traj.observations, rec.m, rec.p, rec.g, rec.m_hat, rec.p_hat,
            kf.pred_var, kf.upd_var, kf.gain, rec.tracking_error)
    for n in range(H + 1):
        w.writerow([str(n)] + [fmt_float(c[n]) for c in cols])
    out_dir = _output_dir(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / (args.name or "simulate.csv")
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(buf.getvalue())
    print(f"wrote {path}")
    return 0


# --- experiment -----------------------------------------------------------------------


def cmd_experiment(args) -> int:
    if args.name not in EXPERIMENTS:
        return _fail(f"unknown experiment {args.name!r}; choose from {', '.join(EXPERIMENTS)}")
    try:
        cfg = get_config(args.name, args.config, _parse_sets(args.set))
    except (ConfigError, UnknownExperiment, ValueError) as exc:
        return _fail(str(exc))
    result = run_experiment(args.name, workers=args.workers, config=cfg)
    csv_path, json_path = result.write(_output_dir(args.output_dir))
    for v in result.verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'}  {v.check}: {v.detail}")
    print(f"wrote {csv_path} and {json_path}")
    return 0 if result.passed else 1


# --- report -------------------------------------------------------------------------------


def cmd_report(args) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        return _fail(f"results directory not found: {directory}")
    summaries = []
    for path in sorted(directory.glob("*.json")):
        try:
            data = read_summary(path)
        except (OSError, json.JSONDecodeError):
            continue
        if data.get("tool") == "enkf1d" and "verdicts" in data:
            summaries.append(data)
    if not summaries:
        return _fail(f"no experiment results in {directory}")
    rows = {}
    for s in summaries:
        for v in s["verdicts"]:
            rows.setdefault((v["claim"], s["experiment"]), []).append(v)
    table = []
    for (claim, exp), vs in rows.items():
        failed = [v["check"] for v in vs if not v["passed"]]
        table.append((not failed, claim, exp, len(vs), failed))
    table.sort(key=lambda r: (r[0], r[1], r[2]))
    width = max(len(r[1]) for r in table)
    print(f"{'claim'.ljust(width)}  {'experiment':<16} checks  verdict")
    for ok, claim, exp, count, failed in table:
        status = "PASS" if ok else "FAIL (" + ", ".join(failed) + ")"
        print(f"{claim.ljust(width)}  {exp:<16} {count:>6}  {status}")
    return 0 if all(r[0] for r in table) else 1


# --- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enkf1d", description="Scalar EnKF laboratory")
    parser.add_argument("--version", action="version", version=f"enkf1d {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="one seeded signal/EnKF run as per-step CSV")
    for key in ("A", "B", "C", "D"):
        sim.add_argument(f"--{key}", type=float)
    sim.add_argument("--x0-mean", dest="x0_mean", type=float)
    sim.add_argument("--p0", type=float)
    sim.add_argument("--N", type=int)
    sim.add_argument("--horizon", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--config", help="config file, or a previous simulate CSV to rerun")
    sim.add_argument("--output-dir")
    sim.add_argument("--name", help="output file name (default simulate.csv)")
    sim.set_defaults(func=cmd_simulate)

    exp = sub.add_parser("experiment", help="run a named Monte Carlo experiment")
    exp.add_argument("name", help="one of: " + ", ".join(EXPERIMENTS))
    exp.add_argument("--config", help="config file, or a previous result file to rerun")
    exp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    exp.add_argument("--workers", type=int, default=1)
    exp.add_argument("--output-dir")
    exp.set_defaults(func=cmd_experiment)

    rep = sub.add_parser("report", help="print claim-to-verdict table for a results directory")
    rep.add_argument("directory")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EnKFLabError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
