"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 capacity exceeded, 4 audit failure.
Data files never contain timestamps; those live in ``manifest.json``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, analytics
from .config import ConfigError, ExperimentConfig, load_config
from .core import GENERAL_MAX_N, CapacityError, Engine, run_survival
from .couplings import ConsistencyError, run_coupled_xy
from .experiments import (POINT_COLUMNS, EngineDivergenceError, ExperimentSpec,
                          InsufficientRangeError, audit_coupling, audit_floor, compare_engines,
                          fit_exponent, reinfection_gap_audit, residual_audit, run_grid)
from .model import ProcessParams
from .rng import SeedSpec
from .rounds import write_rounds_csv

EXIT_OK, EXIT_USAGE, EXIT_CAPACITY, EXIT_AUDIT = 0, 2, 3, 4
OUTPUT_ENV = "STARSIRS_OUTPUT_DIR"
DEFAULT_OUTPUT = "starsirs-output"


class UsageError(ValueError):
    pass


def _clean(obj):
    """JSON-safe copy with non-finite floats as strings."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunManifest:
    """Record of how every output file of a command was produced."""

    def __init__(self, command: str, argv: list[str]):
        self.data = {"tool": "starsirs", "version": __version__, "command": command,
                     "argv": list(argv), "started": _now(), "experiments": [], "outputs": {}}
        self.outdir: Path | None = None

    def add_experiment(self, resolved: dict) -> None:
        self.data["experiments"].append(resolved)

    def write_file(self, path: Path, text: str) -> None:
        path.write_text(text, encoding="utf-8", newline="")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.data["outputs"][path.name] = {"sha256": digest, "bytes": path.stat().st_size}

    def finish(self, outdir: Path, status: int) -> None:
        self.data["finished"] = _now()
        self.data["exit_code"] = status
        (outdir / "manifest.json").write_text(dumps(self.data), encoding="utf-8")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# -- simulate ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    params = ProcessParams(args.n, args.lam, args.alpha, args.variant)
    engine = Engine(args.engine)
    if engine is Engine.GENERAL and params.n > GENERAL_MAX_N:
        print(f"capacity: the general engine supports n <= {GENERAL_MAX_N}", file=sys.stderr)
        return EXIT_CAPACITY
    if args.replicas < 1:
        raise UsageError("--replicas must be positive")
    spec = ExperimentSpec([params], args.replicas, args.seed, engine, args.horizon)
    res = run_grid(spec, args.workers)
    summary = {"seed": args.seed, "engine": engine.value, "horizon": args.horizon,
               **{c: v for c, v in zip(POINT_COLUMNS, res.rows()[0])}}
    sys.stdout.write(dumps(summary))
    if args.rounds_csv:
        _, recs = run_survival(params, spec.seed(0, args.rounds_replica), engine, args.horizon)
        with open(args.rounds_csv, "w", newline="") as fh:
            write_rounds_csv(recs, fh)
    return EXIT_OK


# -- formula -------------------------------------------------------------------

def _need(args, *names):
    vals = {}
    for name in names:
        v = getattr(args, name)
        if v is None:
            raise UsageError(f"--{name} is required for this operation")
        vals[name] = v
    return vals


def _formula(op: str, args):
    if op == "round-failure":
        v = _need(args, "a", "lam", "alpha")
        return v, analytics.round_failure_prob(int(v["a"]), v["lam"], v["alpha"])
    if op == "pmf":
        v = _need(args, "a", "alpha")
        return v, analytics.immunity_survival_pmf(int(v["a"]), v["alpha"]).p.tolist()
    if op == "gautschi":
        v = _need(args, "alpha", "x")
        v["tol"] = args.tol
        return v, analytics.gautschi_series(v["alpha"], v["x"], args.tol)
    if op == "gamma-tail":
        v = _need(args, "n", "alpha", "t")
        return v, analytics.gamma_tail_bound(int(v["n"]), v["alpha"], v["t"])
    if op == "max-exp":
        v = _need(args, "n", "lam")
        return v, {"mean": analytics.expected_max_exponentials(int(v["n"]), v["lam"]),
                   "bound": analytics.max_exponentials_bound(int(v["n"]), v["lam"])}
    if op == "leaf-matrix":
        v = _need(args, "x", "lam", "alpha")
        return v, analytics.leaf_transition_matrix(v["x"], v["lam"], v["alpha"]).tolist()
    if op == "prop-s-b":
        v = _need(args, "alpha")
        return v, analytics.prop_s_constant(v["alpha"])
    if op == "conditioned-rate":
        v = _need(args, "a", "b")
        return v, analytics.conditioned_exponential_rate(v["a"], v["b"])
    if op == "path-single":
        v = _need(args, "x", "lam")
        return v, analytics.single_infection_path_prob(v["x"], v["lam"])
    if op == "path-immune":
        v = _need(args, "x", "lam", "alpha")
        return v, analytics.immune_then_infection_path_prob(v["x"], v["lam"], v["alpha"])
    if op == "oracle-mean":
        v = _need(args, "n", "lam", "alpha")
        v["variant"] = args.variant
        sol = analytics.exact_mean_survival(ProcessParams(int(v["n"]), v["lam"], v["alpha"],
                                                          args.variant))
        return v, {"mean_survival": sol.mean_survival, "mean_psi": sol.mean_psi}
    raise UsageError(f"unknown operation {op!r}")


FORMULA_OPS = ("round-failure", "pmf", "gautschi", "gamma-tail", "max-exp", "leaf-matrix",
               "prop-s-b", "conditioned-rate", "path-single", "path-immune", "oracle-mean")


def cmd_formula(args) -> int:
    inputs, value = _formula(args.op, args)
    inputs = {("lambda" if k == "lam" else k): v for k, v in inputs.items()}
    sys.stdout.write(dumps({"operation": args.op, "inputs": inputs, "output": value}))
    return EXIT_OK


# -- config-driven commands ----------------------------------------------------------

def _outdir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _configs(args) -> list[ExperimentConfig]:
    cfgs = load_config(args.config)
    if args.section:
        cfgs = [c for c in cfgs if c.name == args.section]
        if not cfgs:
            raise UsageError(f"no section named {args.section!r}")
    return cfgs


def _run_config_command(args, body) -> int:
    cfgs = _configs(args)
    out = _outdir(args)
    manifest = RunManifest(args.command, sys.argv[1:] if args.argv is None else args.argv)
    status = EXIT_OK
    try:
        for cfg in cfgs:
            manifest.add_experiment(cfg.resolved())
            status = max(status, body(cfg, out, manifest, args))
    except (ConsistencyError, EngineDivergenceError) as exc:
        print(f"audit failure: {exc}", file=sys.stderr)
        status = EXIT_AUDIT
    finally:
        manifest.finish(out, status)
    return status


def _sweep_body(cfg: ExperimentConfig, out: Path, manifest: RunManifest, args) -> int:
    res = run_grid(cfg.spec, args.workers)
    manifest.write_file(out / f"{cfg.name}.csv", _csv_text(POINT_COLUMNS, res.rows()))
    doc = {"experiment": cfg.name, "points": [dict(zip(POINT_COLUMNS, r)) for r in res.rows()],
           "unreliable_points": [k for k, p in enumerate(res.points) if p.unreliable]}
    if cfg.fit:
        try:
            doc["fit"] = fit_exponent(res, cfg.fit, cfg.min_dominance).as_dict()
        except InsufficientRangeError as exc:
            doc["fit"] = {"error": str(exc)}
    manifest.write_file(out / f"{cfg.name}.json", dumps(doc))
    return EXIT_OK


def _oracle_body(cfg: ExperimentConfig, out: Path, manifest: RunManifest, args) -> int:
    points = []
    for k, params in enumerate(cfg.spec.grid):
        sol = analytics.exact_mean_survival(params)
        buf = io.StringIO()
        sol.write_csv(buf)
        manifest.write_file(out / f"{cfg.name}_{k}.csv", buf.getvalue())
        points.append({**params.as_dict(), "mean_survival": sol.mean_survival,
                       "mean_psi": sol.mean_psi, "states": len(sol.states)})
    manifest.write_file(out / f"{cfg.name}.json", dumps({"experiment": cfg.name, "points": points}))
    return EXIT_OK


def _audit_body(cfg: ExperimentConfig, out: Path, manifest: RunManifest, args) -> int:
    spec = cfg.spec
    if not spec.audits:
        raise UsageError(f"[{cfg.name}] lists no audits")
    results = []
    lines = io.StringIO()
    failed = False
    if "coupling" in spec.audits:
        for r in audit_coupling(spec, raise_on_failure=False, sink=lines):
            results.append(r.as_dict())
            failed |= not r.passed
    if "floor" in spec.audits:
        for r in audit_floor(spec, args.workers, cfg.floor_required):
            results.append(r.as_dict())
            failed |= not r.passed
    if "residual" in spec.audits:
        for k, params in enumerate(spec.grid):
            r = residual_audit(params, spec.replicas, SeedSpec(spec.master_seed, (k,)))
            results.append(r.as_dict())
            failed |= not r.passed
    if "reinfection_gap" in spec.audits:
        for k, params in enumerate(spec.grid):
            for b in cfg.gap_b:
                r = reinfection_gap_audit(b, params.lam, cfg.gap_samples,
                                          SeedSpec(spec.master_seed, (k, b)))
                results.append(r.as_dict())
                failed |= not r.passed
    if "engines" in spec.audits:
        for c, params in zip(compare_engines(spec, raise_on_failure=False), spec.grid):
            results.append({"audit": "engines", **params.as_dict(), **c.as_dict(),
                            "passed": c.agree})
            failed |= not c.agree
    if lines.getvalue():
        manifest.write_file(out / f"{cfg.name}.jsonl", lines.getvalue())
    manifest.write_file(out / f"{cfg.name}.json", dumps({"experiment": cfg.name,
                                                         "audits": results}))
    return EXIT_AUDIT if failed else EXIT_OK


def _coupled_body(cfg: ExperimentConfig, out: Path, manifest: RunManifest, args) -> int:
    spec = cfg.spec
    lines = io.StringIO()
    summary = []
    failed = False
    for p, params in enumerate(spec.grid):
        ok = 0
        psi_x = psi_y = 0
        for k in range(spec.replicas):
            seed = spec.seed(p, k)
            run = run_coupled_xy(params, seed, horizon=spec.horizon, strict=False)
            lines.write(run.json_line(seed) + "\n")
            ok += run.ok
            psi_x += run.psi_x
            psi_y += run.psi_y
        rate = ok / spec.replicas
        failed |= rate < 1.0
        summary.append({**params.as_dict(), "runs": spec.replicas, "pass_rate": rate,
                        "mean_psi_x": psi_x / spec.replicas, "mean_psi_y": psi_y / spec.replicas})
    manifest.write_file(out / f"{cfg.name}.jsonl", lines.getvalue())
    manifest.write_file(out / f"{cfg.name}.json", dumps({"experiment": cfg.name,
                                                         "points": summary}))
    return EXIT_AUDIT if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="starsirs", description="SIRS/SIS processes on star graphs")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="survival runs at one parameter point")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--variant", choices=["x", "y", "sis"], default="x")
    s.add_argument("--replicas", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--engine", choices=["lumped", "general"], default="lumped")
    s.add_argument("--horizon", type=float, default=1e8)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--rounds-csv", help="write the round records of one replica here")
    s.add_argument("--rounds-replica", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("formula", help="evaluate a closed-form quantity")
    f.add_argument("--op", required=True, help=", ".join(FORMULA_OPS))
    for name in ("a", "b", "x", "t", "alpha"):
        f.add_argument(f"--{name}", type=float)
    f.add_argument("--n", type=float)
    f.add_argument("--lambda", dest="lam", type=float)
    f.add_argument("--tol", type=float, default=1e-12)
    f.add_argument("--variant", choices=["x", "y", "sis"], default="x")
    f.set_defaults(func=cmd_formula)

    bodies = {"sweep": _sweep_body, "oracle": _oracle_body, "audit": _audit_body,
              "coupled": _coupled_body}
    for name, body in bodies.items():
        c = sub.add_parser(name, help=f"{name} experiments from a configuration file")
        c.add_argument("config")
        c.add_argument("--section", help="run only this section")
        c.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
        c.add_argument("--workers", type=int, default=1)
        c.set_defaults(func=lambda a, body=body: _run_config_command(a, body), argv=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "argv", "unset") is None:
        args.argv = list(sys.argv[1:] if argv is None else argv)
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (CapacityError, analytics.CapacityError) as exc:
        print(f"capacity: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (UsageError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
