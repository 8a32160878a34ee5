"""Policy induction and success-rate evaluation of learned and fused rewards."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gridworld import GridEnv, optimal_policy, rollout

EPISODES = 200
HELDOUT_COUNT = 5
CONDITIONS = ("local", "mean", "barycenter")
SPLITS = ("in_distribution", "held_out")
CSV_COLUMNS = ("condition", "split", "mean", "std", "n_seeds")


def induce_policy(reward, env: GridEnv) -> np.ndarray:
    """Greedy optimal policy of ``reward`` under the env's own dynamics."""
    return optimal_policy(env.kernel, np.asarray(reward, dtype=float), env.gamma)


def success_rate(policy, env: GridEnv, episodes: int = EPISODES, seed=0) -> float:
    """Percentage of episodes reaching the goal within the horizon."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    hits = sum(rollout(env, policy, rng).terminated == "goal" for _ in range(episodes))
    return 100.0 * hits / episodes


def theta_success(theta, env: GridEnv, episodes: int, seed) -> float:
    return success_rate(induce_policy(env.features.phi @ np.asarray(theta, dtype=float), env), env, episodes, seed)


@dataclass
class EvalReport:
    """Success rates pooled over seeds and environments per (condition, split)."""

    values: dict = field(default_factory=dict)  # (condition, split) -> {seed: [per-env rates]}
    episodes: int = EPISODES
    seeds: list = field(default_factory=list)

    def add(self, condition: str, split: str, seed: int, rates) -> None:
        rates = [float(r) for r in rates]
        if any(not 0.0 <= r <= 100.0 for r in rates):
            raise ValueError("success rates must lie in [0, 100]")
        self.values.setdefault((condition, split), {}).setdefault(seed, []).extend(rates)
        if seed not in self.seeds:
            self.seeds.append(seed)

    def merge(self, other: "EvalReport", rename=None) -> None:
        for (cond, split), per_seed in other.values.items():
            name = rename(cond) if rename else cond
            for seed, rates in per_seed.items():
                self.add(name, split, seed, rates)

    def rows(self) -> list[dict]:
        out = []
        for (cond, split), per_seed in self.values.items():
            pooled = np.concatenate([np.asarray(v) for v in per_seed.values()])
            out.append({
                "condition": cond,
                "split": split,
                "mean": float(pooled.mean()),
                "std": float(pooled.std()),
                "n_seeds": len(per_seed),
            })
        return out

    def summary(self, condition: str, split: str = "in_distribution") -> float:
        for row in self.rows():
            if (row["condition"], row["split"]) == (condition, split):
                return row["mean"]
        raise KeyError((condition, split))

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "seeds": list(self.seeds),
            "rows": self.rows(),
            "per_seed": [
                {"condition": c, "split": s, "seed": seed, "rates": rates}
                for (c, s), per_seed in self.values.items()
                for seed, rates in per_seed.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        report = cls(episodes=data["episodes"])
        for entry in data["per_seed"]:
            report.add(entry["condition"], entry["split"], entry["seed"], entry["rates"])
        report.seeds = list(data["seeds"])
        return report


def evaluate_conditions(fleet: list[GridEnv], local_thetas, theta_bary, theta_mean, heldout: list[GridEnv],
                        seed: int, episodes: int = EPISODES, report: EvalReport | None = None,
                        include_local: bool = True) -> EvalReport:
    """Local rewards on their own clients; fused rewards on every client and held-out env.

    Rollout seeds are derived from ``seed`` and the (condition, env) slot so
    that every condition sees the same start-state and slip draws.
    """
    report = EvalReport(episodes=episodes) if report is None else report

    def rates(thetas, envs, split):
        return [theta_success(t, env, episodes, np.random.SeedSequence([seed, split, j]))
                for j, (t, env) in enumerate(zip(thetas, envs))]

    if include_local:
        report.add("local", "in_distribution", seed, rates(local_thetas, fleet, 0))
    for name, theta in (("mean", theta_mean), ("barycenter", theta_bary)):
        report.add(name, "in_distribution", seed, rates([theta] * len(fleet), fleet, 0))
        if heldout:
            report.add(name, "held_out", seed, rates([theta] * len(heldout), heldout, 1))
    return report


def emit_report(report: EvalReport, out_dir, stem: str = "report") -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (one row per condition) and ``<stem>.json``."""
    if not report.seeds:
        raise ValueError("refusing to write a report with no seeds")
    out_dir = Path(out_dir)
    csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(report.rows())
        json_path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    except OSError as exc:
        raise OSError(f"could not write report under {out_dir}: {exc}") from exc
    return csv_path, json_path
