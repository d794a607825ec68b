import csv
import json

import numpy as np
import pytest

from cbf_invert import cli
from cbf_invert.constraints import QuadraticBarrier
from cbf_invert.harness import certify, montecarlo, sweep, trace
from cbf_invert.harness.config import MATRIX, HarnessConfig, load_config, parse_config_name
from cbf_invert.harness.metrics import classify_inferences, rollout_metrics
from cbf_invert.harness.rollout import count_collisions, run_rollout
from cbf_invert.harness.scenario import (ScenarioError, ScenarioParams, audit_scenario,
                                         generate_scenario)


# scenarios

def test_same_seed_same_scenario():
    a, b = generate_scenario(42), generate_scenario(42)
    assert np.array_equal(a.starts, b.starts) and np.array_equal(a.goals, b.goals)
    assert [o.theta.tolist() for o in a.obstacles] == [o.theta.tolist() for o in b.obstacles]
    assert a.knowledge == b.knowledge
    c = generate_scenario(43)
    assert not np.array_equal(a.starts, c.starts)


def test_obstacle_free_scenario():
    spec = generate_scenario(0, ScenarioParams(n_obstacles=0))
    assert spec.n_obstacles == 0 and spec.obstacles == () and audit_scenario(spec) == []
    res = run_rollout(spec)
    assert res.collisions == 0 and res.inferred == []


@pytest.mark.parametrize("params", [ScenarioParams(), HarnessConfig().scenario,
                                    HarnessConfig().certificate_params()])
def test_hundred_seeds_pass_audit(params):
    for seed in range(100):
        spec = generate_scenario(seed, params)
        assert audit_scenario(spec) == [], seed
        assert params.n_obstacles[0] <= spec.n_obstacles <= params.n_obstacles[1]
        for holders in spec.knowledge.values():
            assert len(holders) == 1


def test_goals_opposite_starts():
    spec = generate_scenario(3)
    center = 0.5 * (np.array(spec.arena[0]) + np.array(spec.arena[1]))
    s, g = spec.starts.mean(axis=0) - center, spec.goals.mean(axis=0) - center
    assert np.allclose(s, -g)


def test_placement_failure_suggests_fewer_obstacles():
    with pytest.raises(ScenarioError, match="fewer obstacles"):
        generate_scenario(0, ScenarioParams(n_obstacles=40, arena=((0, 0), (6, 6))))


def test_scenario_params_validation():
    with pytest.raises(ValueError):
        ScenarioParams(n_agents=1)
    with pytest.raises(ValueError):
        ScenarioParams(inference_method="magic")
    with pytest.raises(ValueError):
        ScenarioParams(constraint_form="square")


# metrics

def test_classify_empty():
    assert classify_inferences([], [QuadraticBarrier.circle([0, 0], 1.0)], 0.25) == ([], [])


def test_classify_exact_match():
    m, g = classify_inferences([np.array([1.0, 2.0])], [QuadraticBarrier.circle([1, 2], 1.0)], 0.25)
    assert len(m) == 1 and m[0].error == 0.0 and g == []


def test_classify_far_inference_is_ghost():
    m, g = classify_inferences([np.array([0.75, 0.0])], [QuadraticBarrier.circle([0, 0], 1.0)], 0.25)
    assert m == [] and g == [0]


def test_classify_each_truth_matched_once():
    truth = [QuadraticBarrier.circle([0, 0], 1.0)]
    m, g = classify_inferences([np.array([0.1, 0.0]), np.array([0.05, 0.0])], truth, 0.25)
    assert [x.inferred for x in m] == [1] and g == [0]


def test_classify_tie_breaks_by_insertion_order():
    truth = [QuadraticBarrier.circle([0, 0], 1.0)]
    m, g = classify_inferences([np.array([0.1, 0.0]), np.array([-0.1, 0.0])], truth, 0.25)
    assert [x.inferred for x in m] == [0] and g == [1]


def test_collisions_count_first_entries():
    ob = QuadraticBarrier.circle([0.0, 0.0], 1.0)
    xs = np.array([2.0, 0.5, 0.5, 2.0, 0.5])
    pos = np.stack([np.column_stack([xs, np.zeros(5)]), np.full((5, 2), 5.0)], axis=1)
    assert count_collisions(pos, [ob]) == [(1, 0, 0), (4, 0, 0)]


def test_metrics_are_bounded():
    res = run_rollout(generate_scenario(1))
    m = rollout_metrics(res, 0.25)
    assert m.collisions >= 0 and m.ghosts >= 0
    assert 0.0 <= m.discovery_rate <= 1.0


# Monte Carlo

def test_reports_are_bit_identical():
    cfg = HarnessConfig()
    a = montecarlo.run_monte_carlo(cfg, 3, ("cbf-kkt", "circle-im"))
    b = montecarlo.run_monte_carlo(cfg, 3, ("cbf-kkt", "circle-im"))
    for name in a:
        assert [r.__dict__ for r in a[name].rollouts] == [r.__dict__ for r in b[name].rollouts]
        assert repr(a[name].summary()) == repr(b[name].summary())


def test_parallel_matches_serial(monkeypatch):
    cfg = HarnessConfig()
    monkeypatch.setenv(montecarlo.THREADS_ENV, "1")
    serial = montecarlo.run_monte_carlo(cfg, 3, ("cbf-kkt",))
    monkeypatch.setenv(montecarlo.THREADS_ENV, "2")
    parallel = montecarlo.run_monte_carlo(cfg, 3, ("cbf-kkt",))
    assert [r.__dict__ for r in serial["cbf-kkt"].rollouts] == \
        [r.__dict__ for r in parallel["cbf-kkt"].rollouts]


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv(montecarlo.THREADS_ENV, "3")
    assert montecarlo.worker_count() == 3
    assert montecarlo.worker_count(2) == 2
    monkeypatch.setenv(montecarlo.THREADS_ENV, "0")
    assert montecarlo.worker_count() >= 1
    monkeypatch.setenv(montecarlo.THREADS_ENV, "lots")
    assert montecarlo.worker_count() >= 1


def test_cbf_im_ghosts_and_error_ratio(mc_reports):
    reports, _ = mc_reports
    ck, ci = reports["cbf-kkt"], reports["cbf-im"]
    assert ci.ghosts[0] >= 1
    assert ci.inference_error[0] >= 10 * ck.inference_error[0]


def test_circle_kkt_band(mc_reports):
    lk = mc_reports[0]["circle-kkt"]
    assert lk.collisions[0] >= 2
    assert lk.discovery_rate <= 0.4


def test_matrix_orderings(mc_reports):
    reports, _ = mc_reports
    kkt_err = [reports[n].inference_error[0] for n in ("cbf-kkt", "circle-kkt")]
    im_err = [reports[n].inference_error[0] for n in ("cbf-im", "circle-im")]
    assert max(kkt_err) < min(im_err)
    assert reports["cbf-kkt"].discovery_rate > reports["circle-kkt"].discovery_rate
    assert reports["cbf-im"].discovery_rate > reports["circle-im"].discovery_rate
    assert all(reports["cbf-kkt"].collisions[0] <= reports[n].collisions[0] for n in MATRIX)


def test_monte_carlo_csv(tmp_path, mc_reports):
    reports, _ = mc_reports
    path = tmp_path / "mc.csv"
    montecarlo.write_csv(reports, path)
    text = path.read_text().split("\n# summary\n")
    rows = list(csv.DictReader(text[0].splitlines()))
    assert list(rows[0]) == list(montecarlo.CSV_COLUMNS)
    assert len(rows) == 20 * len(MATRIX)
    assert {r["config"] for r in rows} == set(MATRIX)
    summary = [line[2:] for line in text[1].splitlines() if line.startswith("# ")]
    assert summary[0].startswith("config,rollouts") and len(summary) == 1 + len(MATRIX)


# certificates

def test_certificate_scenarios_are_safe():
    runs = certify.run_certificates(HarnessConfig(), 10)
    assert len(runs) == 10 and certify.all_safe(runs)
    assert all(r.report.premises_ok for r in runs)


# sweep

def test_sweep_scenario_has_both_constraints_active():
    scn = sweep.two_active_scenario()
    assert len(scn.active) == 2 and "obstacle" in scn.active


def test_sweep_truth_is_fixed_point():
    scn = sweep.two_active_scenario()
    for method in sweep.METHODS:
        cell = sweep.run_cell(scn, scn.theta, method)
        assert cell.outcome == sweep.CONVERGED_TRUE, method


def test_sweep_csv(tmp_path):
    scn = sweep.two_active_scenario()
    cells = sweep.newton_region_sweep(scn, resolution=3)
    assert len(cells) == 9 * len(sweep.METHODS)
    path = tmp_path / "sweep.csv"
    sweep.write_csv(cells, path)
    rows = list(csv.DictReader(path.open()))
    assert tuple(rows[0]) == sweep.CSV_COLUMNS
    assert {r["outcome"] for r in rows} <= {sweep.CONVERGED_TRUE, sweep.CONVERGED_WRONG, sweep.DIVERGED}
    with pytest.raises(ValueError):
        sweep.run_cell(scn, scn.theta, "guess")


# trace and config

def test_trace_format(tmp_path):
    res = run_rollout(generate_scenario(2))
    path = tmp_path / "trace.jsonl"
    n = trace.write_trace(res.world, path)
    recs = trace.read_trace(path)
    assert n == len(recs) == len(res.world.log) * res.spec.n_agents
    assert all(tuple(r) == trace.TRACE_FIELDS for r in recs)
    assert {r["role"] for r in recs} == {"demonstrator", "learner"}
    verdicts = [r["inference_verdict"] for r in recs if r["inference_verdict"]]
    assert verdicts
    for line in path.read_text().splitlines():
        for num in json.loads(line)["position"]:
            assert len(repr(num).replace("-", "").replace(".", "").lstrip("0").split("e")[0]) <= 12


def test_trace_number_precision():
    assert trace._num(1.0 / 3.0) == 0.333333333333
    assert trace._num([2.0 / 3.0]) == [0.666666666667]


def test_config_round_trip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "scenario": {"n_agents": 3, "n_obstacles": [1, 2], "arena": [[0, 0], [12, 12]]},
        "planner": {"horizon": 10},
        "inference": {"match_frac": 0.2},
        "montecarlo": {"rollouts": 7, "seed": 5, "matrix": ["cbf-kkt"]},
        "sweep": {"grid_min": [-1, -1], "grid_max": [1, 1], "resolution": 5},
        "certify": {"seeds": 4, "n_obstacles": [1, 1]},
    }))
    cfg = load_config(path)
    assert cfg.scenario.n_agents == 3 and cfg.scenario.n_obstacles == (1, 2)
    assert cfg.scenario.arena == ((0.0, 0.0), (12.0, 12.0))
    assert cfg.planner.horizon == 10 and cfg.match_tol == pytest.approx(0.2)
    assert (cfg.rollouts, cfg.seed, cfg.matrix) == (7, 5, ("cbf-kkt",))
    assert cfg.grid_min == (-1, -1) and cfg.resolution == 5
    assert cfg.certify_seeds == 4 and cfg.certificate_params().n_obstacles == (1, 1)
    assert cfg.certificate_params().certificate


def test_config_rejects_unknown_section():
    with pytest.raises(ValueError):
        HarnessConfig.from_dict({"scenery": {}})


def test_default_config_when_no_file():
    assert load_config(None) == HarnessConfig()


@pytest.mark.parametrize("name,want", [("cbf-kkt", ("cbf", "kkt")),
                                       ("Circle-IM", ("circle", "input_matching"))])
def test_parse_config_name(name, want):
    assert parse_config_name(name) == want


def test_parse_config_name_rejects_unknown():
    with pytest.raises(ValueError):
        parse_config_name("cbf-magic")


# command line

def test_cli_simulate_writes_trace(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    assert cli.main(["simulate", "--seed", "1", "--trace", str(out)]) == 0
    assert "cbf-kkt seed 1" in capsys.readouterr().out
    assert trace.read_trace(out)


def test_cli_montecarlo_csv(tmp_path, capsys):
    out = tmp_path / "mc.csv"
    assert cli.main(["montecarlo", "--rollouts", "2", "--matrix", "cbf-kkt,circle-im",
                     "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.read_text().split("\n# summary\n")[0].splitlines()))
    assert len(rows) == 4
    assert "circle-im" in capsys.readouterr().out


def test_cli_sweep_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert cli.main(["sweep-newton", "--grid-min=-1,-2", "--grid-max=1,0", "--resolution", "2",
                     "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 4 * len(sweep.METHODS)
    assert {float(r["x0"]) for r in rows} == {-1.0, 1.0}


def test_cli_certify_exit_code(capsys):
    assert cli.main(["certify", "--seeds", "3"]) == 0
    assert "certificate holds" in capsys.readouterr().out


def test_cli_bad_config_path(tmp_path, capsys):
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_rejects_unknown_method():
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--method", "cbf-magic"])
