from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest

from tmpc import dynamics as dyn
from tmpc.errors import ConfigError
from tmpc.harness import (OUTCOMES, TRIAL_COLUMNS, initial_offsets, open_loop_errors, open_loop_study, plant_step,
                          planner_state, read_trial_csv, run_batch, run_trial)
from tmpc.planner import Goal
from tmpc.scenario import benign_spec, builtin, scenario_from_dict
from tmpc.terrain import Heightmap

N_FAST = 48


@pytest.fixture(scope="module")
def benign():
    return builtin("benign")


@pytest.fixture(scope="module")
def benign_run(benign):
    return run_trial(benign, seed=0, model="srb", n_samples=N_FAST, perturb=False)


def drive(state, rates, terrain, vp, tp):
    out = [state]
    for r in rates:
        state = plant_step(state, (r, 0.0), terrain, vp, tp)
        out.append(state)
    return np.array(out)


# ------------------------------------------------------------------ plant

def test_plant_straight_on_flat(vp, tp, flat):
    s = dyn.srb_rest_state(flat, 0, 0, 0.3, 5.0, vp)
    traj = drive(s, np.zeros(100), flat, vp, tp)
    assert np.allclose(traj[:, dyn.SRB_PSI], 0.3, atol=1e-9)
    assert np.allclose(traj[:, dyn.SRB_VBX], 5.0)
    assert np.hypot(*(traj[-1, :2] - traj[0, :2])) == pytest.approx(5.0, rel=1e-6)


@pytest.mark.parametrize("terrain_name", ["flat", "mild"])
def test_plant_matches_planner_model(terrain_name, vp, tp, request):
    terrain = request.getfixturevalue(terrain_name)
    rates = 0.3 * np.sin(0.02 * np.arange(400))
    plant = drive(dyn.srb_rest_state(terrain, 0, 0, 0, 6.0, vp), rates, terrain, vp, tp)
    model = dyn.integrate("srb", plant[0], np.column_stack([rates, np.zeros(400)]), terrain, vp, tp,
                          dt_int=0.005, dt_zoh=0.01)[::2]
    assert np.max(np.hypot(model[:, 0] - plant[:, 0], model[:, 1] - plant[:, 1])) < 0.05


def test_planner_state_projection(vp, flat):
    s = dyn.srb_rest_state(flat, 1, 2, 0.4, 6.0, vp)
    s[dyn.SRB_WBZ], s[dyn.SRB_VBY], s[dyn.SRB_DELTA] = 0.2, 0.1, 0.05
    est = planner_state("est", s)
    assert est.tolist() == [1, 2, 0.4, 0.1, 0.2, 0.05, 6.0]
    assert np.array_equal(planner_state("srb", s), s)


# ------------------------------------------------------------------ trial

def test_benign_success_time(benign_run):
    # goal circle of 2.5 m around a point 20 m ahead, at 5 m/s
    assert benign_run.outcome == "success"
    assert benign_run.t_end == pytest.approx(17.5 / 5.0, abs=0.02)
    assert benign_run.first_collision_time is None


def test_timestamps_and_columns(benign_run):
    assert benign_run.rows.shape[1] == len(TRIAL_COLUMNS) == 18
    assert np.allclose(np.diff(benign_run.times), 0.01)
    assert benign_run.times[0] == 0.0
    # one solve every fourth step, none on the terminal row
    assert len(benign_run.solver_rows) == math.ceil((len(benign_run.times) - 1) / 4)


def test_start_inside_goal(benign):
    sc = benign.replace(goal=Goal(0.5, 0.0))
    rec = run_trial(sc, seed=0, n_samples=4)
    assert rec.outcome == "success" and rec.t_end == 0.0
    assert rec.solver_rows == []


def wall_ramp():
    res = 0.1
    xs = -10 + res * np.arange(501)
    ys = -10 + res * np.arange(201)
    X, Y = np.meshgrid(xs, ys)
    # a 45 degree ramp under the left track only
    return Heightmap(np.where(Y > 0.0, np.clip(X - 4.0, 0.0, 3.0), 0.0), -10, -10, res)


@pytest.mark.parametrize("model", ["est", "srb"])
def test_wall_ramp_rollover(model, benign):
    sc = benign.replace(terrain=wall_ramp(), goal=Goal(35.0, 0.0), start=(0.0, 0.0, 0.0, 8.0))
    rec = run_trial(sc, seed=0, model=model, n_samples=32, perturb=False)
    assert rec.outcome == "rollover"
    last = rec.states[-1]
    assert max(abs(last[dyn.SRB_PHI]), abs(last[dyn.SRB_THETA])) > math.radians(72)


def test_same_seed_identical_bytes(benign, tmp_path):
    a = run_trial(benign, seed=3, model="est", n_samples=N_FAST)
    b = run_trial(benign, seed=3, model="est", n_samples=N_FAST)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert a.solver_csv().splitlines()[1:] != [] and a.solver_csv().startswith("# seed=3")


def test_csv_round_trip(benign_run, tmp_path):
    benign_run.to_csv(tmp_path / "t.csv")
    back = read_trial_csv(tmp_path / "t.csv")
    assert np.array_equal(back.rows, benign_run.rows)
    assert back.metadata() == benign_run.metadata()


def test_csv_errors_name_line(tmp_path, benign_run):
    text = benign_run.to_csv().splitlines()
    text[15] = text[15].replace(",", ";", 1)
    (tmp_path / "bad.csv").write_text("\n".join(text) + "\n")
    with pytest.raises(ConfigError) as exc:
        read_trial_csv(tmp_path / "bad.csv")
    assert ":16:" in exc.value.problems[0]


def test_offsets_matched_across_formulations(benign):
    lo, ho = benign.trial.lateral_offset, benign.trial.heading_offset
    seen = set()
    for seed in range(50):
        d_lat, d_psi = initial_offsets(seed, lo, ho)
        assert abs(d_lat) <= lo and abs(d_psi) <= ho
        seen.add(round(d_lat, 9))
    assert len(seen) == 50
    a = run_trial(benign, seed=7, model="est", n_samples=4)
    b = run_trial(benign, seed=7, model="srb", n_samples=4)
    assert a.offsets == b.offsets != (0.0, 0.0)
    assert np.array_equal(a.rows[0, 1:14], b.rows[0, 1:14])


def test_collision_is_bookkeeping_only():
    spec = benign_spec(n_samples=N_FAST)
    spec["constraints"] = {"enable_distance": False}
    free = scenario_from_dict(spec)
    spec["perimeters"] = [{"kind": "obstacle", "vertices": [[8, -0.4], [10, -0.4], [10, 0.4], [8, 0.4]]}]
    blocked = scenario_from_dict(spec)
    a = run_trial(free, seed=1)
    b = run_trial(blocked, seed=1)
    assert a.outcome == "success" and b.outcome == "goal_with_collision"
    assert np.array_equal(a.states, b.states)
    assert b.first_collision_time > 0 and b.collision_time > 0
    assert np.min(b.rows[:, 16]) < 0


def test_aborted_on_solver_failure(benign):
    def rollout_costs(model, x0, controls, *args, **kw):
        n = controls.shape[0]
        return np.full(n, np.inf), np.full((n, 5), np.inf), np.full(n, np.nan)

    fake = SimpleNamespace(name="fake", rollout_costs=rollout_costs)
    sc = benign.replace(planner=benign.planner.replace(backend=fake))
    rec = run_trial(sc, seed=0, n_samples=4)
    assert rec.outcome == "aborted" and "diverged" in rec.message


# ------------------------------------------------------------------ batch

def test_empty_batch(benign):
    out = run_batch(benign, n_trials=0)
    assert out.rows == [] and out.trials == []


def test_benign_batch_recount(benign):
    out = run_batch(benign, n_trials=2, n_samples=N_FAST, base_seed=10)
    assert len(out.rows) == 2 and len(out.trials) == 4
    for row in out.rows:
        assert row["p_success"] == 1.0 and row["p_rollover"] == 0.0
        assert sum(row[f"p_{o}"] for o in OUTCOMES) == pytest.approx(1.0)
        assert row["seeds"] == "10 11"
        recs = [r for _, r in out.trials if r.model == row["formulation"]]
        for o in OUTCOMES:
            assert row[f"p_{o}"] == sum(r.outcome == o for r in recs) / len(recs)
    est = {i: r for i, r in out.trials if r.model == "est"}
    srb = {i: r for i, r in out.trials if r.model == "srb"}
    assert all(est[i].offsets == srb[i].offsets for i in est)


def test_batch_deterministic_across_trial_workers(benign):
    a = run_batch(benign, formulations=("est",), n_trials=2, n_samples=16)
    b = run_batch(benign, formulations=("est",), n_trials=2, n_samples=16, trial_workers=2)
    assert a.trials_csv() == b.trials_csv() and a.to_csv() == b.to_csv()


def test_batch_rejects_bad_matrix(benign):
    with pytest.raises(ConfigError):
        run_batch(benign, setups=[4], n_trials=1)
    with pytest.raises(ConfigError):
        run_batch(benign, formulations=("car",), n_trials=1)


# -------------------------------------------------------------- open loop

def test_open_loop_self_comparison(vp, tp, ridge):
    rates = 0.3 * np.sin(0.02 * np.arange(400))
    plant = drive(dyn.srb_rest_state(ridge, 0, 0, 0, 5.0, vp), rates, ridge, vp, tp)
    e = open_loop_errors(plant, rates, "srb", ridge, vp, tp, scheme="rk4", dt_int=0.001)
    assert e.location < 1e-9 and e.esm < 1e-6 and not e.diverged


@pytest.mark.parametrize("model", ["est", "srb"])
def test_open_loop_straight_flat(model, vp, tp, flat):
    plant = drive(dyn.srb_rest_state(flat, 0, 0, 0, 6.0, vp), np.zeros(400), flat, vp, tp)
    e = open_loop_errors(plant, np.zeros(400), model, flat, vp, tp)
    assert 0.0 <= e.location < 0.01
    assert e.esm < 1.0


def test_open_loop_too_short(vp, tp, flat):
    plant = drive(dyn.srb_rest_state(flat, 0, 0, 0, 6.0, vp), np.zeros(50), flat, vp, tp)
    with pytest.raises(ConfigError):
        open_loop_errors(plant, np.zeros(50), "srb", flat, vp, tp)


def test_open_loop_divergence_flagged(vp, tp, flat):
    plant = np.repeat(dyn.srb_rest_state(flat, 0, 0, 0, 6.0, vp)[None], 5, axis=0)
    plant[0, dyn.SRB_THETA] = 1.5702
    e = open_loop_errors(plant, np.zeros(4), "srb", flat, vp, tp, horizon=0.04)
    assert e.diverged and math.isinf(e.location)


def test_setup3_one_step_prediction(vp, tp):
    sc = builtin("stress")
    terrain = sc.terrains(3)["plant"]
    rates = 0.3 * np.sin(0.02 * np.arange(400))
    plant = drive(dyn.srb_rest_state(terrain, 0, 0, 0, 8.0, vp), rates, terrain, vp, tp)
    worst = 0.0
    for i in range(0, 396, 4):
        u = np.column_stack([rates[i:i + 4], np.zeros(4)])
        pred = dyn.integrate("srb", plant[i], u, terrain, vp, tp, dt_int=0.005, dt_zoh=0.01)[-1]
        worst = max(worst, math.hypot(*(pred[:2] - plant[i + 4, :2])))
    assert worst < 1e-3


def test_open_loop_study_segments(benign_run, benign):
    rec = benign_run
    n_rows = rec.rows.shape[0]
    out = open_loop_study([rec], benign, horizon=2.0, stride=0.2)
    expected = len(range(0, n_rows - 200, 20))
    assert len(out["est"]) == len(out["srb"]) == expected
    assert [e.start_time for e in out["est"]] == pytest.approx([0.2 * k for k in range(expected)])
    assert all(e.location >= 0 and e.esm >= 0 for m in out for e in out[m])

