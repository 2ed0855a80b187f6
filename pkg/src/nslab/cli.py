"""Command-line entry point: ``nslab run | audit | fixed-point | decompose``.

Exit codes: 0 success, 1 configuration or usage error, 2 blow-up,
3 audit violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import os
import sys
import time
from dataclasses import replace

from . import __version__
from . import spectral as sp
from .auditor import CHECKS, run_checks
from .config import Config, load_config
from .diagnostics import NormLedger
from .dynamics import make_initial_data, run_coupled
from .errors import BlowUpError, NSLabError
from .estimates import EstimateParams, solve_A
from .fieldio import field_hash, read_field, write_field, write_rows, write_timeseries
from .helmholtz import decompose, orthogonality_report

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_AUDIT = 0, 1, 2, 3


class _UsageExit(Exception):
    def __init__(self, message, usage):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; this CLI reserves 2 for blow-up
    def error(self, message):
        raise _UsageExit(message, self.format_usage())


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nslab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nslab {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{run,audit,fixed-point,decompose}",
                                parser_class=_Parser)

    def sim_flags(p):
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", help="output directory (default: output_dir from the config)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--nu", type=float, help="override the bulk viscosity")
        p.add_argument("--check", help=f"comma-separated audits from {','.join(CHECKS)}")

    sim_flags(sub.add_parser("run", help="simulate and write manifest.json + timeseries.csv"))
    sim_flags(sub.add_parser("audit", help="simulate, then run the audits and report"))

    fp = sub.add_parser("fixed-point", help="solve the constant-chain fixed point over a sweep")
    fp.add_argument("--config", help="take estimate parameters from this configuration")
    fp.add_argument("--out", help="output directory (default: current directory)")
    fp.add_argument("--nu", type=float, help="single bulk viscosity")
    fp.add_argument("--sweep", help='parameter grid, e.g. "nu=10,100,1000" or "nu=1e4,1e5;p=4,5"')

    dp = sub.add_parser("decompose", help="split a field file into its potentials")
    dp.add_argument("field", help="input field file (vector)")
    dp.add_argument("--out", help="output directory (default: current directory)")
    return parser


def _checks(text):
    if text is None:
        return None
    names = tuple(c.strip() for c in text.split(",") if c.strip())
    for c in names:
        if c not in CHECKS:
            raise NSLabError(f"unknown check {c!r}; known: {', '.join(CHECKS)}")
    return names


def _load(args) -> Config:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.nu is not None:
        cfg = cfg.with_nu(args.nu)
    checks = _checks(args.check)
    if checks is not None:
        cfg = replace(cfg, checks=checks)
    return cfg


def _outdir(args, default):
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _simulate(cfg: Config, out: str, store_fields: bool):
    """Run once and write manifest + time series, blow-up included."""
    grid = sp.create_grid(cfg.grid_n)
    V0, v0 = make_initial_data(cfg.scenario, grid, cfg.physics, cfg.estimates, cfg.seed,
                               dealias=cfg.dealias)
    ledger = NormLedger(cfg.physics, cfg.estimates, cfg.ledger_options)
    manifest = {
        "config": cfg.echo(),
        "code_version": __version__,
        "initial_hashes": {"V0": field_hash(V0), "v0": field_hash(v0)},
    }
    t0 = time.perf_counter()
    error = None
    try:
        traj = run_coupled(cfg, ledger=ledger, store_fields=store_fields, initial=(V0, v0))
    except BlowUpError as exc:
        traj, error = exc.trajectory, exc
    manifest["wall_clock_s"] = round(time.perf_counter() - t0, 3)
    manifest["outcome"] = traj.outcome
    manifest["failed_step"] = traj.failed_step
    manifest["samples"] = traj.n_samples
    manifest["regime_violation_at"] = ledger.regime_violation_at
    write_timeseries(traj, os.path.join(out, "timeseries.csv"))
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return traj, error


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg.output_dir)
    traj, error = _simulate(cfg, out, store_fields=False)
    if error is not None:
        print(f"blow-up at step {error.step}: {error}", file=sys.stderr)
        return EXIT_BLOWUP
    print(f"{traj.n_samples} samples written to {out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg.output_dir)
    traj, error = _simulate(cfg, out, store_fields=True)
    if error is not None:
        print(f"blow-up at step {error.step}: {error}", file=sys.stderr)
        return EXIT_BLOWUP
    reports = run_checks(traj, cfg.checks, gamma=cfg.scenario.gamma)
    lines = []
    for r in reports:
        lines.extend(r.lines())
    lines.append("")
    lines.append(f"{'check':<28} {'status':<14} {'ok':<4}")
    for r in reports:
        lines.append(f"{r.check_id:<28} {r.status:<14} {'yes' if r.ok else 'NO':<4}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, "audit.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK if all(r.ok for r in reports) else EXIT_AUDIT


_SWEEPABLE = {f.name for f in dataclasses.fields(EstimateParams)
              if f.type in ("float", "float | None")}


def _parse_sweep(text):
    axes = []
    for part in text.split(";"):
        if not part.strip():
            continue
        key, sep, vals = part.partition("=")
        key = key.strip()
        if not sep or key not in _SWEEPABLE:
            raise NSLabError(f"bad sweep axis {part.strip()!r}; use name=v1,v2 with a numeric "
                             "estimate parameter")
        try:
            values = [float(v) for v in vals.split(",") if v.strip()]
        except ValueError:
            raise NSLabError(f"sweep axis {key!r} has a non-numeric value") from None
        if not values:
            raise NSLabError(f"sweep axis {key!r} is empty")
        axes.append((key, values))
    if not axes:
        raise NSLabError("empty sweep")
    return axes


def cmd_fixed_point(args) -> int:
    base = load_config(args.config).estimates if args.config else EstimateParams()
    if args.nu is not None and args.sweep:
        raise NSLabError("--nu and --sweep are exclusive")
    if args.sweep:
        axes = _parse_sweep(args.sweep)
    else:
        axes = [("nu", [args.nu if args.nu is not None else base.nu])]
    names = [k for k, _ in axes]
    rows = []
    for combo in itertools.product(*(v for _, v in axes)):
        params = base.with_(**dict(zip(names, combo)))
        res = solve_A(params)
        row = dict(zip(names, combo))
        row.update(res.as_row())
        row["message"] = res.message
        rows.append(row)
    out = _outdir(args, ".")
    path = os.path.join(out, "fixed_point.csv")
    write_rows(path, rows)
    with open(path, encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


def cmd_decompose(args) -> int:
    f = read_field(args.field)
    if f.ndim != 4:
        raise NSLabError("decompose needs a vector field (rank 1)")
    V = sp.to_spectral(f)
    pair = decompose(V)
    out = _outdir(args, ".")
    write_field(os.path.join(out, "phi.field"), sp.to_real(pair.phi))
    write_field(os.path.join(out, "psi.field"), sp.to_real(pair.psi))
    report = orthogonality_report(V)
    text = "".join(f"{k} = {report[k]:.17g}\n" for k in sorted(report))
    with open(os.path.join(out, "orthogonality.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "audit": cmd_audit, "fixed-point": cmd_fixed_point,
            "decompose": cmd_decompose}


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageExit as exc:
        sys.stderr.write(exc.usage)
        print(f"nslab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command is None:
        sys.stderr.write(parser.format_usage())
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except NSLabError as exc:
        print(f"nslab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"nslab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
