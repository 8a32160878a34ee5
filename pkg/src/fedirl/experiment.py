"""Experiment configs and drivers shared by the command line and the tests."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .bounds import fleet_campaign, proof_step_campaign, summarize
from .evaluation import EPISODES, HELDOUT_COUNT, EvalReport, evaluate_conditions
from .federation import FleetConfig, build_fleet, build_heldout, run_round
from .gridworld import MAX_SLIP, shared_lattice
from .irl import IrlConfig
from .ot import BarycenterConfig, build_cost_matrix, entropic_barycenter

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "fleet": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_clients": _POS_INT,
                "width": _POS_INT,
                "height": _POS_INT,
                "obstacle_count": {"type": ["integer", "null"], "minimum": 0},
                "goal": {"type": ["array", "null"], "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                "max_slip": {"type": "number", "minimum": 0, "maximum": MAX_SLIP},
                "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "horizon": _POS_INT,
                "demos_per_client": _POS_INT,
                "weak_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "weak_scale": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "weights": {"enum": ["uniform", "by_demo_count"]},
                "theta_star": {"type": "array", "items": _NUM, "minItems": 1},
            },
        },
        "irl": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "l2_lambda": {"type": "number", "minimum": 0},
                "iterations": _POS_INT,
                "soft_vi_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "horizon_mode": {"enum": ["finite", "infinite"]},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "barycenter": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "sinkhorn_iters": _POS_INT,
                "outer_iters": _POS_INT,
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "fusion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"sigma_margin": {"type": "number", "exclusiveMinimum": 0}},
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"episodes": _POS_INT, "heldout_count": {"type": "integer", "minimum": 0}},
        },
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "ablation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "weak_fractions": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                                   "minItems": 1},
            },
        },
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"trials": _POS_INT, "proof_trials": _POS_INT, "seed": {"type": "integer", "minimum": 0}},
        },
        "scaling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grids": {"type": "array", "minItems": 1,
                          "items": {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2}},
                "clients": _POS_INT,
                "outer_iters": _POS_INT,
                "repeats": _POS_INT,
            },
        },
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    fleet: FleetConfig = field(default_factory=FleetConfig)
    irl: IrlConfig = field(default_factory=IrlConfig)
    barycenter: BarycenterConfig = field(default_factory=BarycenterConfig)
    sigma_margin: float = 1.0
    episodes: int = EPISODES
    heldout_count: int = HELDOUT_COUNT
    seeds: tuple = tuple(range(10))
    weak_fractions: tuple = (0.0, 0.25, 0.5)
    bound_trials: int = 100
    proof_trials: int = 500
    bound_seed: int = 0
    scaling_grids: tuple = ((25, 5), (25, 10), (25, 20))
    scaling_clients: int = 3
    scaling_outer_iters: int = 2
    scaling_repeats: int = 3
    threads: int = 1  # runtime only, never read from the config file

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
        fleet = dict(data.get("fleet", {}))
        for key in ("goal", "weak_scale", "theta_star"):
            if fleet.get(key) is not None:
                fleet[key] = tuple(fleet[key])
        bounds, scaling = data.get("bounds", {}), data.get("scaling", {})
        try:
            return cls(
                fleet=FleetConfig(**fleet),
                irl=IrlConfig(**data.get("irl", {})),
                barycenter=BarycenterConfig(**data.get("barycenter", {})),
                sigma_margin=data.get("fusion", {}).get("sigma_margin", 1.0),
                episodes=data.get("eval", {}).get("episodes", EPISODES),
                heldout_count=data.get("eval", {}).get("heldout_count", HELDOUT_COUNT),
                seeds=tuple(data.get("seeds", range(10))),
                weak_fractions=tuple(data.get("ablation", {}).get("weak_fractions", (0.0, 0.25, 0.5))),
                bound_trials=bounds.get("trials", 100),
                proof_trials=bounds.get("proof_trials", 500),
                bound_seed=bounds.get("seed", 0),
                scaling_grids=tuple(tuple(g) for g in scaling.get("grids", ((25, 5), (25, 10), (25, 20)))),
                scaling_clients=scaling.get("clients", 3),
                scaling_outer_iters=scaling.get("outer_iters", 2),
                scaling_repeats=scaling.get("repeats", 3),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


@dataclass
class SeedArtifacts:
    seed: int
    records: list
    fused: dict
    theta_mean: list
    weighted_error: float

    def to_dict(self) -> dict:
        return {"seed": self.seed, "clients": [r.to_dict() for r in self.records], "barycenter": self.fused,
                "mean": {"theta": self.theta_mean}, "weighted_error": self.weighted_error}


def run_seed(cfg: ExperimentConfig, fleet_cfg: FleetConfig, seed: int, report: EvalReport,
             include_local: bool = True, rename=None) -> SeedArtifacts:
    """One full round for one master seed: train, fuse, evaluate."""
    fleet_cfg = fleet_cfg.replace(master_seed=seed)
    fleet = build_fleet(fleet_cfg)
    rnd = run_round(fleet, fleet_cfg, cfg.irl, cfg.barycenter, sigma_margin=cfg.sigma_margin,
                    threads=cfg.threads)
    heldout = build_heldout(fleet_cfg, cfg.heldout_count)
    part = evaluate_conditions(fleet, [r.irl_result.theta_hat for r in rnd.records], rnd.theta_bary,
                               rnd.theta_mean, heldout, seed, cfg.episodes, include_local=include_local)
    report.merge(part, rename)
    return SeedArtifacts(seed, rnd.records, rnd.server.fused.to_dict(),
                         [float(v) for v in rnd.theta_mean], rnd.weighted_error())


def run_experiment(cfg: ExperimentConfig) -> tuple[EvalReport, list[SeedArtifacts]]:
    report = EvalReport(episodes=cfg.episodes)
    artifacts = [run_seed(cfg, cfg.fleet, seed, report) for seed in cfg.seeds]
    return report, artifacts


def ablation_label(condition: str, p: float) -> str:
    return f"{condition}@p={p:.2f}"


def run_ablation(cfg: ExperimentConfig) -> tuple[EvalReport, list[dict]]:
    """Fused conditions for every weak-client fraction; local rows are skipped."""
    report = EvalReport(episodes=cfg.episodes)
    artifacts = []
    for p in cfg.weak_fractions:
        fleet_cfg = cfg.fleet.replace(weak_fraction=p)
        for seed in cfg.seeds:
            art = run_seed(cfg, fleet_cfg, seed, report, include_local=False,
                           rename=lambda c, p=p: ablation_label(c, p))
            artifacts.append({"weak_fraction": p, **art.to_dict()})
    return report, artifacts


def run_bounds(cfg: ExperimentConfig, trials: int | None = None, proof_trials: int | None = None) -> dict:
    trials = cfg.bound_trials if trials is None else trials
    proof_trials = cfg.proof_trials if proof_trials is None else proof_trials
    fleets = fleet_campaign(trials, cfg.bound_seed, cfg.fleet, cfg.irl, cfg.barycenter)
    steps = proof_step_campaign(proof_trials, cfg.bound_seed)
    return {
        "trials": trials,
        "fusion_stability_passed": sum(f["fusion_stability"]["passed"] for f in fleets),
        "policy_gap_passed": sum(f["policy_gap"]["passed"] for f in fleets),
        "proof_steps": summarize(steps),
        "fleets": fleets,
        "proof_step_trials": {k: [q.to_dict() for q in v] for k, v in steps.items()},
    }


def time_barycenter(width: int, height: int, clients: int, config: BarycenterConfig, repeats: int,
                    seed: int = 0) -> tuple[int, int, float]:
    """(n, cost bytes, best per-outer-iteration seconds) on a full width x height lattice."""
    lattice = shared_lattice(width, height)
    cost = build_cost_matrix(lattice)
    rng = np.random.default_rng(seed)
    measures = rng.dirichlet(np.ones(cost.n), size=clients)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        entropic_barycenter(measures, cost, config)
        best = min(best, (time.perf_counter() - t0) / config.outer_iters)
    return cost.n, cost.nbytes, best


def run_scaling(cfg: ExperimentConfig) -> list[dict]:
    bc = BarycenterConfig(cfg.barycenter.epsilon, cfg.barycenter.sinkhorn_iters, cfg.scaling_outer_iters,
                          cfg.barycenter.momentum)
    rows = []
    for w, h in cfg.scaling_grids:
        n, nbytes, seconds = time_barycenter(w, h, cfg.scaling_clients, bc, cfg.scaling_repeats)
        rows.append({"n": n, "bytes": nbytes, "seconds": seconds})
    return rows


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def config_echo(cfg: ExperimentConfig) -> dict:
    return {
        "fleet": asdict(cfg.fleet),
        "irl": asdict(cfg.irl),
        "barycenter": asdict(cfg.barycenter),
        "sigma_margin": cfg.sigma_margin,
        "episodes": cfg.episodes,
        "heldout_count": cfg.heldout_count,
        "seeds": list(cfg.seeds),
    }
