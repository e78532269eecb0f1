from __future__ import annotations

import json

import numpy as np
import pytest

from tmpc.errors import ConfigError
from tmpc.scenario import LOD_TABLE, Scenario, TrialSettings, benign_spec, builtin, load_scenario, scenario_from_dict
from tmpc.terrain import gaussian_smooth, write_heightmap


def test_builtins_load():
    benign = builtin("benign")
    assert benign.start == (0.0, 0.0, 0.0, 5.0)
    assert benign.goal.x_g == 20.0 and benign.perimeters == []
    stress = builtin("stress", speed=8.0, model="est")
    assert stress.planner.model == "est" and stress.trial.speeds == (8.0,)
    assert stress.sdist.has_features
    with pytest.raises(ConfigError):
        builtin("moon")


def test_all_problems_reported_together():
    spec = benign_spec()
    spec["vehicle"] = {"M": -5, "colour": "red"}
    spec["planner"]["n_samples"] = 0
    spec["goal"]["r"] = 0
    spec["trial"]["setup"] = 7
    spec["extra"] = {}
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(spec)
    text = "\n".join(exc.value.problems)
    for needle in ("vehicle.colour", "vehicle: M", "planner: n_samples", "goal: r_g", "trial: trial.setup",
                   "extra: unknown block"):
        assert needle in text, needle


def test_missing_blocks():
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict({"perimeters": []})
    assert {"terrain: required block missing", "start: required block missing",
            "goal: required block missing"} <= set(exc.value.problems)
    with pytest.raises(ConfigError):
        scenario_from_dict([])


def test_json_error_location(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "name": "x",\n  "start": {"x": 1,}\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_scenario(path)
    assert exc.value.problems[0].startswith(f"{path}:3:")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "nope.json")


def test_start_inside_obstacle():
    spec = benign_spec()
    spec["perimeters"] = [{"kind": "obstacle", "vertices": [[-1, -1], [1, -1], [1, 1], [-1, 1]]}]
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(spec)
    assert "inside obstacle perimeters[0]" in exc.value.problems[0]


def test_nonpositive_speed():
    spec = benign_spec()
    spec["start"]["speed"] = 0.0
    with pytest.raises(ConfigError):
        scenario_from_dict(spec)


def test_lod_setups():
    sc = builtin("stress")
    for setup, (plant, srb, est) in LOD_TABLE.items():
        t = sc.terrains(setup)
        assert t["plant"] is sc.lod(plant) and t["srb"] is sc.lod(srb) and t["est"] is sc.lod(est)
    t3 = sc.terrains(3)
    assert t3["plant"] is t3["srb"] is t3["est"]
    assert np.array_equal(t3["plant"].heights, gaussian_smooth(sc.terrain, 1.5).heights)
    assert sc.terrains(1)["plant"] is sc.terrain


def test_terrain_file_reference(tmp_path):
    grid = builtin("benign").terrain
    write_heightmap(grid, tmp_path / "ground.hm")
    spec = benign_spec()
    spec["terrain"] = {"file": "ground.hm"}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    sc = load_scenario(tmp_path / "s.json")
    assert sc.terrain == grid
    spec["terrain"] = {"file": "missing.hm"}
    with pytest.raises(ConfigError):
        scenario_from_dict(spec, base_dir=tmp_path)
    spec["terrain"] = {"file": "ground.hm", "synth": {"kind": "flat"}}
    with pytest.raises(ConfigError):
        scenario_from_dict(spec, base_dir=tmp_path)


def test_weights_and_constraints_reach_planner():
    spec = benign_spec()
    spec["planner"]["weights"] = {"w_g": 3.0}
    spec["constraints"] = {"a_by_bar": 4.0, "enable_distance": False}
    sc = scenario_from_dict(spec)
    assert sc.planner.weights.w_g == 3.0
    assert sc.planner.constraints.a_by_bar == 4.0 and sc.planner.constraints.enable_distance is False


def test_trial_settings_validation():
    assert TrialSettings().plan_every == 4
    with pytest.raises(ConfigError) as exc:
        TrialSettings(speeds=(), planner_period=0.015, rollover_deg=95)
    assert len(exc.value.problems) == 3


def test_replace_keeps_validation():
    sc = builtin("benign")
    assert isinstance(sc.replace(name="b2"), Scenario)
    with pytest.raises(ConfigError):
        sc.replace(start=(0.0, 0.0, 0.0, -1.0))
