"""Experiment drivers, run records and the command line front end."""

import dataclasses
import json
import math

import numpy as np
import pytest

from ctql.envsim import RngStream
from ctql.experiments.cli import main
from ctql.experiments.ergodic import (ErgodicExperimentConfig, run_ergodic,
                                      run_ergodic_replications,
                                      running_average_reward)
from ctql.experiments.mv import (MV_ALGOS, MvExperimentConfig, lagrange_update,
                                 metrics_terminal, run_mv, run_mv_replications)
from ctql.experiments.records import (RunRecord, aggregate_metrics,
                                      config_dict, write_summary)

SHORT = ErgodicExperimentConfig(horizon=200.0)


def small_mv(**kw):
    base = dict(updates=40, batch=8, eval_runs=10, train_years=2.0)
    base.update(kw)
    return MvExperimentConfig(**base)


def test_running_average_reward_hand_values():
    times, avg = running_average_reward(np.array([1.0, 3.0]), 0.5)
    assert np.allclose(times, [0.5, 1.0])
    assert np.allclose(avg, [1.0, 2.0])
    times, avg = running_average_reward(np.array([1.0, 3.0, 5.0]), 0.5, every=2)
    assert np.allclose(times, [1.0])
    assert np.allclose(avg, [2.0])
    with pytest.raises(ValueError):
        running_average_reward(np.array([]), 0.5)


def test_scalar_and_lane_ergodic_drivers_agree():
    recs = run_ergodic_replications(SHORT, "qlearn-online", "on-policy", 17, 2)
    solo = run_ergodic(SHORT, "qlearn-online", "on-policy", RngStream(17, (1, 0)))
    assert solo.replication == 1
    assert solo.final_params == recs[1].final_params
    assert solo.metrics == recs[1].metrics
    assert solo.trace == recs[1].trace


def test_lane_count_does_not_change_a_replication():
    two = run_ergodic_replications(SHORT, "qlearn-online", "on-policy", 17, 2)
    five = run_ergodic_replications(SHORT, "qlearn-online", "on-policy", 17, 5)
    assert two[1].final_params == five[1].final_params
    assert two[1].trace == five[1].trace
    assert two[0].final_params == five[0].final_params


def test_ergodic_runs_are_deterministic():
    a = run_ergodic_replications(SHORT, "sarsa", "on-policy", 5, 2)
    b = run_ergodic_replications(SHORT, "sarsa", "on-policy", 5, 2)
    for ra, rb in zip(a, b):
        assert ra.to_dict() == rb.to_dict()
        assert ra.trace == rb.trace


def test_healthy_short_runs_complete():
    for algo in ("qlearn-online", "sarsa", "pg"):
        recs = run_ergodic_replications(SHORT, algo, "on-policy", 11, 2)
        for rec in recs:
            assert rec.status == "ok"
            assert rec.divergence_step is None
            assert math.isfinite(rec.metrics["avg_reward"])
            assert all(math.isfinite(v) for v in rec.final_params.values())


def test_divergent_replications_are_reported_not_raised():
    cfg = ErgodicExperimentConfig(horizon=2000.0)
    recs = run_ergodic_replications(cfg, "pg", "off-policy", 0, 2)
    for rec in recs:
        assert rec.status == "NA"
        assert isinstance(rec.divergence_step, int)
        assert rec.metrics == {}
        assert all(math.isfinite(v) for v in rec.final_params.values())
        for key, column in rec.trace.items():
            if key == "reward_avg":
                # a dead lane reports no average, never a bogus number
                col = np.asarray(column)
                assert np.all(np.isfinite(col) | np.isnan(col))
                assert np.isnan(col[-1])
            else:
                assert np.all(np.isfinite(column))


def test_sampled_pg_route_tracks_rate_learner_at_matched_rates():
    cfg_q = ErgodicExperimentConfig(horizon=500.0)
    cfg_pg = dataclasses.replace(cfg_q, pg_regularizer="sampled",
                                 alpha_phi=cfg_q.gamma * cfg_q.alpha_psi)
    rec_q = run_ergodic(cfg_q, "qlearn-online", "on-policy", RngStream(2, (0, 0)))
    rec_pg = run_ergodic(cfg_pg, "pg", "on-policy", RngStream(2, (0, 0)))
    pairs = {"p1": "f1", "p2": "f2", "p3": "f3",
             "th1": "th1", "th2": "th2", "V": "V"}
    for qk, pk in pairs.items():
        assert rec_pg.final_params[pk] == pytest.approx(
            rec_q.final_params[qk], abs=1e-6)


def test_ergodic_argument_validation():
    with pytest.raises(ValueError):
        run_ergodic_replications(SHORT, "dqn", "on-policy", 0, 1)
    with pytest.raises(ValueError):
        run_ergodic_replications(SHORT, "sarsa", "offline", 0, 1)
    with pytest.raises(ValueError):
        ErgodicExperimentConfig(dt=-0.1)
    with pytest.raises(ValueError):
        ErgodicExperimentConfig(pg_regularizer="none")
    with pytest.raises(ValueError):
        ErgodicExperimentConfig(behavior_var=0.0)


def test_lagrange_update_hand_value():
    assert lagrange_update(1.4, [1.38], 0.005, 1.4) == pytest.approx(1.4001, abs=1e-12)
    assert lagrange_update(1.4, [1.4, 1.4], 0.005, 1.4) == pytest.approx(1.4, abs=1e-15)
    with pytest.raises(ValueError):
        lagrange_update(1.4, [], 0.005, 1.4)


def test_metrics_terminal_fixtures():
    mean, var, sharpe = metrics_terminal([1.2, 1.4], 1.0)
    assert mean == pytest.approx(1.3, abs=1e-15)
    assert var == pytest.approx(0.02, abs=1e-15)
    assert sharpe == pytest.approx(2.1213203435596424, abs=1e-12)
    assert metrics_terminal([1.0, 1.0], 1.0) == (1.0, 0.0, 0.0)
    assert metrics_terminal([2.0, 2.0], 1.0)[2] == math.inf
    assert metrics_terminal([0.5, 0.5], 1.0)[2] == -math.inf
    with pytest.raises(ValueError):
        metrics_terminal([1.0], 1.0)


def test_untrained_policy_holds_initial_wealth_under_mean_readout():
    for algo in MV_ALGOS:
        cfg = small_mv(updates=0, eval_runs=20)
        rec = run_mv_replications(cfg, algo, 0, 1)[0]
        assert rec.status == "ok"
        assert rec.metrics["mean"] == 1.0
        assert rec.metrics["variance"] == 0.0
        assert rec.metrics["sharpe"] == 0.0


def test_exploratory_readout_moves_wealth():
    cfg = small_mv(updates=0, eval_runs=20, eval_exploratory=True)
    rec = run_mv_replications(cfg, "qlearn-td", 0, 1)[0]
    assert rec.metrics["variance"] > 0.0


def test_scalar_and_lane_mv_drivers_agree():
    cfg = small_mv()
    recs = run_mv_replications(cfg, "qlearn-td", 23, 2)
    solo = run_mv(cfg, "qlearn-td", RngStream(23, (1, 0)))
    assert solo.replication == 1
    assert solo.final_params == recs[1].final_params
    assert solo.metrics == recs[1].metrics
    assert solo.trace == recs[1].trace
    again = run_mv_replications(cfg, "qlearn-td", 23, 2)
    assert [r.to_dict() for r in again] == [r.to_dict() for r in recs]


def test_mv_smoke_every_algorithm():
    for algo in MV_ALGOS:
        rec = run_mv_replications(small_mv(updates=50), algo, 3, 1)[0]
        assert rec.status == "ok"
        for key in ("mean", "variance", "sharpe"):
            assert math.isfinite(rec.metrics[key])
        assert "w" in rec.trace and "j" in rec.trace
        assert math.isfinite(rec.final_params["w"])


def test_strict_multiplier_box_pulls_the_target_down():
    loose = run_mv_replications(small_mv(), "qlearn-td", 7, 1)[0]
    strict = run_mv_replications(small_mv(strict_multiplier_box=True),
                                 "qlearn-td", 7, 1)[0]
    assert strict.final_params["w"] < loose.final_params["w"]


def test_mv_config_validation():
    with pytest.raises(ValueError):
        small_mv(eval_runs=1)
    with pytest.raises(ValueError):
        small_mv(batch=0)
    with pytest.raises(ValueError):
        small_mv(dt=0.3)
    with pytest.raises(ValueError):
        small_mv(train_years=0.5)
    with pytest.raises(ValueError):
        run_mv_replications(small_mv(), "dqn", 0, 1)


def _hand_records():
    mk = lambda rep, status, a: RunRecord(
        algo="x", mode="m", replication=rep, master_seed=0, status=status,
        divergence_step=None if status == "ok" else 5,
        metrics={} if status != "ok" else {"a": a})
    return [mk(0, "ok", 1.0), mk(1, "NA", 0.0), mk(2, "ok", 3.0)]


def test_aggregate_skips_divergent_runs_and_orders_stably():
    recs = _hand_records()
    agg = aggregate_metrics(recs)
    assert agg["replications"] == 3
    assert agg["completed"] == 2
    assert agg["diverged"] == 1
    assert agg["metric_means"]["a"] == pytest.approx(2.0, abs=1e-15)
    shuffled = [recs[2], recs[0], recs[1]]
    assert aggregate_metrics(shuffled) == agg
    # non-finite metric values stay out of the mean
    recs[0].metrics["a"] = math.inf
    assert aggregate_metrics(recs)["metric_means"]["a"] == pytest.approx(3.0)


def test_summary_output_is_byte_deterministic(tmp_path):
    recs = _hand_records()
    recs[0].trace = {"j": [0, 10], "t": [0.0, 1.0], "b": [0.5, -0.25],
                     "reward_avg": [0.1, 0.2]}
    recs[0].metrics["weird"] = math.nan
    paths = []
    for sub in ("one", "two"):
        paths.append(write_summary(tmp_path / sub, {"dt": 0.1, "algo": "x"}, recs))
    a, b = (open(p, "rb").read() for p in paths)
    assert a == b
    payload = json.loads(a)
    assert [r["replication"] for r in payload["replications"]] == [0, 1, 2]
    assert payload["replications"][0]["metrics"]["weird"] == "nan"
    trace = (tmp_path / "one" / "trace_0.csv").read_text().splitlines()
    assert trace[0] == "j,t,b"
    assert trace[1] == "0,0,0.5"
    rewards = (tmp_path / "one" / "rewards_0.csv").read_text().splitlines()
    assert rewards[0] == "j,t,reward_avg"
    assert (tmp_path / "two" / "trace_0.csv").read_bytes() \
        == (tmp_path / "one" / "trace_0.csv").read_bytes()


def test_config_dict_flattens_callables_and_nested_coefficients():
    d = config_dict(MvExperimentConfig())
    assert d["schedule"] == "power_schedule_0.51"
    assert d["updates"] == 20000
    e = config_dict(ErgodicExperimentConfig())
    assert e["coef.A"] == -1.0
    assert e["schedule"] == "sqrt_log_schedule"


def test_cli_oracle_prints_fixed_point(capsys):
    assert main(["oracle"]) == 0
    sol = json.loads(capsys.readouterr().out)
    assert sol["psi"][0] == pytest.approx(-0.35424868893540927, abs=1e-12)
    assert sol["oracle"] is True


def test_cli_check_suite_passes(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out
    assert "[FAIL]" not in out


def test_cli_lq_writes_deterministic_summaries(tmp_path, capsys):
    argv = ["lq", "--horizon", "100", "--reps", "2", "--seed", "3"]
    d1, d2 = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--out", str(d1)]) == 0
    assert main(argv + ["--out", str(d2)]) == 0
    capsys.readouterr()
    s1 = (d1 / "summary.json").read_bytes()
    assert s1 == (d2 / "summary.json").read_bytes()
    payload = json.loads(s1)
    assert payload["aggregate"]["completed"] == 2
    assert payload["config"]["horizon"] == 100
    assert (d1 / "trace_0.csv").exists()
    assert (d1 / "rewards_1.csv").exists()


def test_cli_config_file_overrides_flags(tmp_path, capsys):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("horizon = 50  # short\nreps=1\n")
    out = tmp_path / "out"
    assert main(["lq", "--horizon", "900", "--out", str(out),
                 "--config", str(cfgfile)]) == 0
    capsys.readouterr()
    payload = json.loads((out / "summary.json").read_text())
    assert payload["config"]["horizon"] == 50
    assert len(payload["replications"]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus=1\n")
    with pytest.raises(SystemExit):
        main(["lq", "--out", str(out), "--config", str(bad)])


def test_cli_mv_smoke(tmp_path, capsys):
    out = tmp_path / "mv"
    assert main(["mv", "--episodes", "30", "--batch", "4", "--eval-runs", "10",
                 "--reps", "1", "--seed", "2", "--out", str(out)]) == 0
    capsys.readouterr()
    payload = json.loads((out / "summary.json").read_text())
    assert payload["config"]["algo"] == "qlearn-td"
    assert payload["aggregate"]["completed"] == 1
    assert "sharpe" in payload["aggregate"]["metric_means"]
