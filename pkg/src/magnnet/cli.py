"""Command-line entry points: train, eval, bench, planner-compare, curves."""

from __future__ import annotations

import json
import os

import click

from .bench import (BenchReport, ScenarioSpec, planner_compare as _planner_compare,
                    emit_curves, run_benchmark)
from .ppo import PPOConfig, train as _train
from .world import WorldConfig


@click.group()
def main():
    """Decentralized multi-agent task allocation lab."""


def _load_json(path):
    with open(path) as f:
        return json.load(f)


@main.command()
@click.argument("config", type=click.Path(exists=True))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default="runs/train",
              show_default=True, help="Output directory.")
def train(config, seed, out):
    """Train a policy from a JSON config with "world" and "ppo" sections."""
    blob = _load_json(config)
    world_cfg = WorldConfig.from_dict(blob.get("world", {}))
    ppo_cfg = PPOConfig.from_dict(blob.get("ppo", {}))
    result = _train(world_cfg, ppo_cfg, seed, out)
    click.echo(json.dumps(result, indent=2))


@main.command("eval")
@click.argument("checkpoint", type=click.Path(exists=True))
@click.argument("scenario", type=click.Path(exists=True))
@click.option("--episodes", type=int, default=None,
              help="Override the scenario's episode count.")
@click.option("--seed", type=int, default=None, help="Override seed base.")
@click.option("--out", type=click.Path(), default="runs/eval", show_default=True)
@click.option("--parallel", type=int, default=1, show_default=True)
def eval_cmd(checkpoint, scenario, episodes, seed, out, parallel):
    """Decentralized evaluation of a trained checkpoint on a scenario."""
    blob = _load_json(scenario)
    blob["checkpoint"] = checkpoint
    blob["methods"] = ("magnnet",)
    if episodes is not None:
        blob["episodes"] = episodes
    if seed is not None:
        blob["seed_base"] = seed
    spec = ScenarioSpec.from_dict(blob)
    _write_report(run_benchmark(spec, parallel), out)


@main.command()
@click.argument("spec", type=click.Path(exists=True))
@click.option("--episodes", type=int, default=None)
@click.option("--seed", type=int, default=None, help="Override seed base.")
@click.option("--out", type=click.Path(), default="runs/bench", show_default=True)
@click.option("--parallel", type=int, default=1, show_default=True)
def bench(spec, episodes, seed, out, parallel):
    """Run the methods x N benchmark sweep from a JSON spec."""
    blob = _load_json(spec)
    if episodes is not None:
        blob["episodes"] = episodes
    if seed is not None:
        blob["seed_base"] = seed
    _write_report(run_benchmark(ScenarioSpec.from_dict(blob), parallel), out)


def _write_report(report: BenchReport, out):
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, "report.csv")
    json_path = os.path.join(out, "report.json")
    report.to_csv(csv_path)
    report.to_json(json_path)
    click.echo(f"wrote {csv_path} and {json_path}")


@main.command("planner-compare")
@click.argument("spec", type=click.Path(exists=True))
@click.option("--episodes", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default="runs/planners",
              show_default=True)
def planner_compare(spec, episodes, seed, out):
    """Compare A* and RRT* path lengths on identical instances."""
    blob = _load_json(spec)
    blob.pop("checkpoint", None)
    blob["methods"] = ("hungarian",)
    if episodes is not None:
        blob["episodes"] = episodes
    if seed is not None:
        blob["seed_base"] = seed
    results = _planner_compare(ScenarioSpec.from_dict(blob))
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "planner_compare.json")
    with open(path, "w") as f:
        json.dump(results, f, indent=2)
    click.echo(f"wrote {path}")


@main.command()
@click.argument("log", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default="runs/curves",
              show_default=True)
def curves(log, out):
    """Emit reward/entropy curves from a training metrics CSV."""
    paths = emit_curves(log, out)
    click.echo(json.dumps(paths, indent=2))


if __name__ == "__main__":
    main()
