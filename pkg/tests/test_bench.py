"""Benchmark harness tests: report shape, metric definitions,
determinism of everything except wall-time columns, and curve emission."""

import csv
import json

import numpy as np
import pytest

from magnnet.bench import (BenchReport, EpisodeLog, REPORT_COLUMNS,
                           ScenarioSpec, WALL_TIME_COLUMNS, allocation_time,
                           emit_curves, planner_compare, run_benchmark,
                           run_episode_baseline, success_rate,
                           write_replay_log)
from magnnet.ppo import ModelParams
from magnnet.world import Episode, WorldConfig


def small_spec(**kw):
    base = dict(mode="static", n_agents=(4,),
                methods=("hungarian", "greedy", "random"), episodes=3,
                seed_base=5, grid_dims=(15, 15, 6), obstacle_density=0.08,
                step_cap=120.0)
    base.update(kw)
    return ScenarioSpec(**base)


def strip_wall_time(csv_path):
    with open(csv_path) as f:
        rows = list(csv.reader(f))
    drop = [rows[0].index(c) for c in WALL_TIME_COLUMNS]
    return [[v for k, v in enumerate(r) if k not in drop] for r in rows]


class TestScenarioSpec:
    def test_magnnet_requires_checkpoint(self):
        with pytest.raises(ValueError):
            ScenarioSpec(methods=("magnnet",))

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            ScenarioSpec(methods=("oracle",))

    def test_dynamic_gets_default_interval(self):
        spec = ScenarioSpec(mode="dynamic", methods=("hungarian",))
        assert spec.task_interval == 5.0

    def test_world_config_split(self):
        cfg = small_spec().world_config(4)
        assert cfg.n_ground == 2 and cfg.n_aerial == 2
        assert cfg.n_tasks_initial == 4 and cfg.m_max == 4


class TestMetrics:
    def test_success_rate(self):
        logs = [EpisodeLog("x", 4, 4, [1], 0, 0, [], True),
                EpisodeLog("x", 4, 4, [], 0, 0, [], True)]
        assert success_rate(logs) == pytest.approx(100.0 * 7 / 8)

    def test_success_rate_empty(self):
        assert success_rate([]) == 100.0

    def test_allocation_time_mean(self):
        logs = [EpisodeLog("x", 4, 4, [], 0, 0.2, [], True),
                EpisodeLog("x", 4, 4, [], 0, 0.4, [], True)]
        assert allocation_time(logs) == pytest.approx(0.3)


class TestBaselineEpisodes:
    def test_hungarian_is_conflict_free(self):
        cfg = small_spec().world_config(4)
        for e in range(5):
            log = run_episode_baseline("hungarian", cfg, 1000 + e)
            assert log.contested == []

    def test_methods_ordered_on_average(self):
        cfg = small_spec().world_config(4)
        h, g, r = [], [], []
        for e in range(8):
            h.append(run_episode_baseline("hungarian", cfg, 2000 + e).total_cost_s)
            g.append(run_episode_baseline("greedy", cfg, 2000 + e).total_cost_s)
            r.append(run_episode_baseline("random", cfg, 2000 + e).total_cost_s)
        assert np.mean(h) <= np.mean(g) + 1e-9
        assert np.mean(g) <= np.mean(r) + 1e-9

    def test_episode_log_fields(self):
        cfg = small_spec().world_config(4)
        log = run_episode_baseline("hungarian", cfg, 7)
        assert log.method == "hungarian"
        assert log.n_agents == 4
        assert log.total_cost_s >= 0
        assert all(l >= 0 for l in log.path_lengths_m)


class TestRunBenchmark:
    def test_report_shape_and_determinism(self, tmp_path):
        spec = small_spec()
        r1 = run_benchmark(spec)
        r2 = run_benchmark(small_spec())
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        r1.to_csv(p1)
        r2.to_csv(p2)
        assert strip_wall_time(p1) == strip_wall_time(p2)
        with open(p1) as f:
            rows = list(csv.reader(f))
        assert rows[0] == REPORT_COLUMNS
        assert len(rows) == 1 + len(spec.methods) * len(spec.n_agents)

    def test_json_report_carries_reference_tables(self, tmp_path):
        r = run_benchmark(small_spec(methods=("hungarian",), episodes=2))
        path = tmp_path / "r.json"
        r.to_json(path)
        blob = json.loads(path.read_text())
        assert "reference_full_scale" in blob
        assert "rows" in blob and blob["rows"]

    def test_magnnet_method_runs_from_checkpoint(self, tmp_path):
        model = ModelParams.init(np.random.default_rng(0), 4, 4)
        ck = tmp_path / "ck.json"
        model.save(ck)
        spec = small_spec(methods=("magnnet",), episodes=2,
                          checkpoint=str(ck))
        report = run_benchmark(spec)
        assert len(report.rows) == 1
        assert report.rows[0]["method"] == "magnnet"


class TestPlannerCompare:
    def test_astar_never_longer_per_instance(self):
        spec = small_spec(methods=("hungarian",), episodes=3)
        results = planner_compare(spec)
        rows = results[4]["instances"]
        assert rows
        for r in rows:
            assert r["astar_length_m"] <= r["rrt_star_length_m"]
        assert results[4]["mean_astar_length_m"] <= \
            results[4]["mean_rrt_star_length_m"]


class TestCurvesAndReplay:
    def test_emit_curves(self, tmp_path):
        log = tmp_path / "metrics.csv"
        with open(log, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["update_index", "env_steps", "mean_episode_reward",
                        "mean_entropy", "policy_loss", "value_loss",
                        "clip_fraction"])
            w.writerow([1, 512, 2.0, 1.5, 0, 0, 0])
            w.writerow([2, 1024, 2.5, 1.0, 0, 0, 0])
        paths = emit_curves(str(log), str(tmp_path / "curves"))
        with open(paths["entropy"]) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["env_steps", "mean_entropy"]
        assert rows[1:] == [["512", "1.5"], ["1024", "1.0"]]

    def test_replay_log(self, tmp_path):
        cfg = WorldConfig(grid_dims=(15, 15, 6), n_agents=4,
                          n_tasks_initial=4, n_ground=2, n_aerial=2,
                          obstacle_density=0.08)
        ep = Episode(cfg, 3)
        path = tmp_path / "replay.jsonl"
        write_replay_log(ep, str(path))
        lines = path.read_text().strip().splitlines()
        assert json.loads(lines[0])["event"] == "episode_start"
