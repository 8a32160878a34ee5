"""Command-line entry point: ``fedirl {run,eval,ablate,verify-bounds,scaling}``.

Exit codes: 0 success, 1 pipeline failure, 2 usage or config error. Failures
print a one-line JSON error object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .evaluation import EvalReport, emit_report, evaluate_conditions
from .experiment import (
    ConfigError,
    ExperimentConfig,
    config_echo,
    loglog_slope,
    run_ablation,
    run_bounds,
    run_experiment,
    run_scaling,
)
from .federation import build_fleet, build_heldout, worker_count

log = logging.getLogger("fedirl")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_jsonable))
    return path


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {"threads": worker_count(args.threads)}
    if getattr(args, "seeds", None):
        changes["seeds"] = tuple(args.seeds)
    return dataclasses.replace(cfg, **changes)


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    report, artifacts = run_experiment(cfg)
    emit_report(report, out)
    _write_json(out / "fused.json", {"config": config_echo(cfg), "seeds": [a.to_dict() for a in artifacts]})
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_eval(args) -> int:
    """Re-evaluate stored parameters from a previous run's fused.json."""
    cfg = _load(args)
    fused_path = Path(args.fused)
    if not fused_path.is_file():
        raise FileNotFoundError(f"fused file not found: {fused_path}")
    stored = json.loads(fused_path.read_text())
    report = EvalReport(episodes=cfg.episodes)
    for entry in stored["seeds"]:
        seed = entry["seed"]
        fleet_cfg = cfg.fleet.replace(master_seed=seed)
        fleet = build_fleet(fleet_cfg)
        evaluate_conditions(fleet, [c["theta"] for c in entry["clients"]], entry["barycenter"]["theta"],
                            entry["mean"]["theta"], build_heldout(fleet_cfg, cfg.heldout_count), seed,
                            cfg.episodes, report)
    emit_report(report, Path(args.out))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    report, artifacts = run_ablation(cfg)
    emit_report(report, out)
    _write_json(out / "fused.json", {"config": config_echo(cfg), "runs": artifacts})
    return EXIT_OK


def cmd_verify_bounds(args) -> int:
    cfg = _load(args)
    result = run_bounds(cfg, args.trials, args.proof_trials)
    out = Path(args.out)
    _write_json(out if out.suffix == ".json" else out / "bounds.json", result)
    steps_ok = all(s["passed"] == s["trials"] for s in result["proof_steps"].values())
    ok = result["fusion_stability_passed"] == result["trials"] == result["policy_gap_passed"] and steps_ok
    print(json.dumps({"trials": result["trials"], "fusion_stability_passed": result["fusion_stability_passed"],
                      "policy_gap_passed": result["policy_gap_passed"], "proof_steps": result["proof_steps"]},
                     sort_keys=True, default=_jsonable))
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_scaling(args) -> int:
    cfg = _load(args)
    rows = run_scaling(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scaling.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("n", "bytes", "seconds"))
        writer.writeheader()
        writer.writerows(rows)
    ns = [r["n"] for r in rows]
    summary = {"rows": rows}
    if len(rows) > 1:
        summary["time_slope"] = loglog_slope(ns, [r["seconds"] for r in rows])
        summary["bytes_slope"] = loglog_slope(ns, [r["bytes"] for r in rows])
    _write_json(out / "scaling.json", summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedirl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, config_required=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=config_required, help="experiment JSON config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="client workers (FEDIRL_THREADS overrides)")
        p.set_defaults(func=func)
        return p

    p = add("run", cmd_run, "train, fuse and evaluate one configuration", config_required=True)
    p.add_argument("--seeds", type=int, nargs="+")
    p = add("eval", cmd_eval, "re-evaluate parameters stored in fused.json", config_required=True)
    p.add_argument("--fused", required=True, help="fused.json from a previous run")
    p = add("ablate", cmd_ablate, "sweep the weak-client fraction", config_required=True)
    p.add_argument("--seeds", type=int, nargs="+")
    p = add("verify-bounds", cmd_verify_bounds, "randomized checks of the stability bounds")
    p.add_argument("--trials", type=int, default=None, help="random fleets")
    p.add_argument("--proof-trials", type=int, default=None, help="random proof-step trials")
    add("scaling", cmd_scaling, "cost-matrix memory and barycenter time versus lattice size")
    return parser


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": str(exc), "type": type(exc).__name__, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError, UsageError) as exc:
        return _fail(EXIT_USAGE, exc)
    except ValueError as exc:
        if "FEDIRL_THREADS" in str(exc):
            return _fail(EXIT_USAGE, exc)
        return _fail(EXIT_FAILURE, exc)
    except Exception as exc:  # noqa: BLE001 - every pipeline failure becomes exit 1
        log.debug("pipeline failure", exc_info=True)
        return _fail(EXIT_FAILURE, exc)


if __name__ == "__main__":
    sys.exit(main())
