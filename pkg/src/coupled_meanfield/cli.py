"""Command-line entry point: ``coupled-meanfield <command> [options]``.

Exit status: 0 success, 1 runtime error, 2 usage error, 3 invalid config,
4 the run completed but its checks failed. Errors are also written as JSON to
stderr and to ``<out>/error.json``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import config as cfgmod
from . import dae, experiments, io
from .errors import CoupledSystemError, ParseError, ValidationError
from .transport import default_probes, w1_assignment, w1_dual_lower_bound, w1_sorted_1d

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CONFIG, EXIT_CHECKS = 0, 1, 2, 3, 4

PRESETS = {
    "simulate": "default",
    "meanfield": "meanfield_energy",
    "consistency": "consistency",
    "stability": "stability",
    "convergence": "convergence",
    "invariants": "default",
}


def _parser():
    p = argparse.ArgumentParser(prog="coupled-meanfield",
                                description="Particle systems with uniform full-rank constraints "
                                            "and their mean-field limit.")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def common(sp):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--config", help="TOML config file")
        src.add_argument("--preset", choices=cfgmod.packaged_config_names(),
                         help="use a config shipped with the package")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--strict-sequential", action="store_true",
                        help="run everything in one process, in a fixed order")
        sp.add_argument("--validate-only", action="store_true",
                        help="check the config and exit")

    helps = {
        "simulate": "integrate the N-particle ODE model",
        "meanfield": "integrate the mean-field characteristic flow",
        "consistency": "particle model vs mean-field flow of its empirical measure",
        "stability": "two nearby initial conditions against an exponential envelope",
        "convergence": "empirical measures of growing size against a reference",
        "invariants": "run the invariant suite and write pass/fail JSON",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        common(sp)
        if name == "simulate":
            sp.add_argument("--dae-residuals", action="store_true",
                            help="append DAE residual columns to the trajectory CSV")
    w = sub.add_parser("w1", help="W1 distance between two cloud CSV files")
    w.add_argument("a")
    w.add_argument("b")
    w.add_argument("--method", choices=["auto", "sort", "assignment", "dual"], default="auto")
    w.add_argument("--seed", type=int, default=0, help="seed for the dual probe family")
    w.add_argument("--out", default=None, help="also write w1.json and a manifest here")
    return p


def _fail(out, code, kind, message, details=None):
    err = {"error": kind, "message": message, "exit_code": code}
    if details:
        err["details"] = details
    print(json.dumps(err), file=sys.stderr)
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            io.write_json(Path(out) / "error.json", err)
        except OSError:
            pass
    return code


def _load(args):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = cfgmod.parse_config(fh.read())
    else:
        cfg = cfgmod.packaged_config(args.preset or PRESETS[args.command])
    if args.seed is not None:
        cfg.seed = args.seed
        errors = cfgmod.validate(cfg)
        if errors:
            raise ValidationError(errors)
    if getattr(args, "dae_residuals", False):
        cfg.output.dae_residuals = True
    return cfg


def _run(command, cfg, out, strict):
    """Execute one experiment; returns ``(artifact names, passed or None)``."""
    if command == "simulate":
        rec = experiments.simulate(cfg)
        series = dae.dae_residuals(cfg.build_model(), cfg.build_field(), rec) \
            if cfg.output.dae_residuals else None
        io.write_csv(out / "trajectory.csv",
                     *io.trajectory_table(rec, cfg.output.particles, series))
        summary = {"n": rec.particles.shape[1], "T": float(rec.times[-1]),
                   "final": {"y": rec.y[-1], "v": rec.v[-1]},
                   "energy_drift": rec.energy_drift, "max_constraint_drift": rec.max_constraint_drift}
        if series is not None:
            summary["dae"] = {"max_newton_x": series.max_newton_x,
                              "max_newton_y": series.max_newton_y}
        io.write_json(out / "summary.json", summary)
        return ["trajectory.csv", "summary.json"], None
    if command == "meanfield":
        tr = experiments.simulate_meanfield(cfg)
        io.write_csv(out / "trajectory.csv", *io.flow_table(tr))
        io.write_csv(out / "nodes.csv", *io.nodes_table(tr))
        io.write_json(out / "summary.json", {
            "m": tr.nodes.shape[1], "T": float(tr.times[-1]),
            "final": {"y": tr.y[-1], "v": tr.v[-1]}, "energy_drift": tr.energy_drift})
        return ["trajectory.csv", "nodes.csv", "summary.json"], None
    if command == "consistency":
        rep = experiments.run_consistency(cfg)
        io.write_csv(out / "weak_form.csv", *rep.table())
        io.write_json(out / "consistency.json", rep.to_dict())
        return ["weak_form.csv", "consistency.json"], rep.passed
    if command == "stability":
        rep = experiments.run_stability(cfg)
        io.write_csv(out / "stability.csv", *rep.table())
        io.write_json(out / "stability.json", rep.to_dict())
        return ["stability.csv", "stability.json"], rep.passed
    if command == "convergence":
        rep = experiments.run_convergence(cfg, strict_sequential=strict)
        io.write_csv(out / "convergence.csv", *rep.table())
        io.write_json(out / "convergence.json", rep.to_dict())
        return ["convergence.csv", "convergence.json"], rep.passed
    if command == "invariants":
        rep = experiments.run_invariants(cfg)
        io.write_json(out / "invariants.json", rep.to_dict())
        return ["invariants.json"], rep.passed
    raise AssertionError(command)


def _w1(args):
    out = Path(args.out) if args.out else None
    t0 = time.perf_counter()
    try:
        a, b = io.read_cloud(args.a), io.read_cloud(args.b)
        method = args.method
        if method == "auto":
            method = "sort" if a.dim == 1 else "assignment"
        if method == "sort":
            res = w1_sorted_1d(a, b)
        elif method == "assignment":
            res = w1_assignment(a, b)
        else:
            rng = cfgmod.rng_for(args.seed, "probes")
            res = w1_dual_lower_bound(a, b, default_probes(a, b, rng))
    except (OSError, ValueError, CoupledSystemError) as exc:
        return _fail(out, EXIT_RUNTIME, type(exc).__name__, str(exc))
    result = {"value": res.value, "method": res.method.value, "a": args.a, "b": args.b}
    if res.method.value == "ASSIGNMENT":
        result["permutation"] = res.certificate
    print(json.dumps(io.to_jsonable({"value": res.value, "method": res.method.value})))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "w1.json", result)
        io.write_manifest(out, "w1", None, ["w1.json"], time.perf_counter() - t0)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    if args.command == "w1":
        return _w1(args)

    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        cfg = _load(args)
    except ParseError as exc:
        return _fail(out, EXIT_CONFIG, "ParseError", str(exc),
                     {"line": exc.line, "column": exc.column})
    except ValidationError as exc:
        return _fail(out, EXIT_CONFIG, "ValidationError", str(exc),
                     [{"path": p, "message": m} for p, m in exc.errors])
    except OSError as exc:
        return _fail(out, EXIT_CONFIG, "ConfigNotReadable", str(exc))
    if args.validate_only:
        print(json.dumps({"valid": True, "config_hash": io.config_hash(cfg.to_dict())}))
        return EXIT_OK

    out.mkdir(parents=True, exist_ok=True)
    try:
        artifacts, passed = _run(args.command, cfg, out, args.strict_sequential)
    except (CoupledSystemError, ValueError) as exc:
        return _fail(out, EXIT_RUNTIME, type(exc).__name__, str(exc))
    (out / "config.toml").write_text(cfgmod.serialize(cfg), encoding="utf-8")
    artifacts.append("config.toml")
    extra = {"strict_sequential": args.strict_sequential}
    if passed is not None:
        extra["passed"] = passed
    io.write_manifest(out, args.command, cfg.to_dict(), artifacts, time.perf_counter() - t0, extra)
    print(json.dumps({"command": args.command, "out": str(out), "passed": passed}))
    if passed is False:
        return EXIT_CHECKS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
