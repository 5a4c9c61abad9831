"""Scenario schema: profiles, constraints, JSON round-trips, built-ins."""

import json

import numpy as np
import pytest

from microflow.scenarios import (
    ConfigError,
    ConstantProfile,
    Constraints,
    LinearProfile,
    Scenario,
    StepProfile,
    builtin,
    builtin_names,
    load_scenario,
    profile_from_dict,
    profile_to_dict,
    resolve,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)


def test_profile_values():
    const = ConstantProfile(level=2.5)
    assert const.value(0.0) == 2.5
    assert const.value(1e6) == 2.5

    steps = StepProfile(times=(1.0, 10.0), levels=(1.0, 2.0), initial=0.5)
    assert steps.value(0.0) == 0.5  # before the first breakpoint
    assert steps.value(0.999) == 0.5
    assert steps.value(1.0) == 1.0  # inclusive at the breakpoint
    assert steps.value(9.999) == 1.0
    assert steps.value(10.0) == 2.0
    assert steps.value(100.0) == 2.0

    ramp = LinearProfile(times=(1.0, 3.0), levels=(0.0, 4.0))
    assert ramp.value(0.0) == 0.0  # clamped before the first knot
    assert ramp.value(2.0) == pytest.approx(2.0)
    assert ramp.value(3.0) == 4.0
    assert ramp.value(10.0) == 4.0  # clamped after the last knot


def test_profile_validation():
    with pytest.raises(ConfigError):
        ConstantProfile(level=float("nan"))
    with pytest.raises(ConfigError):
        StepProfile(times=(), levels=())  # empty
    with pytest.raises(ConfigError):
        StepProfile(times=(1.0, 1.0), levels=(1.0, 2.0))  # not increasing
    with pytest.raises(ConfigError):
        StepProfile(times=(1.0,), levels=(1.0, 2.0))  # length mismatch
    with pytest.raises(ConfigError):
        LinearProfile(times=(1.0,), levels=(1.0,))  # needs two knots
    with pytest.raises(ConfigError):
        LinearProfile(times=(2.0, 1.0), levels=(0.0, 1.0))


def test_profile_dict_round_trip():
    for profile in (
        ConstantProfile(level=1.5),
        StepProfile(times=(1.0, 2.0), levels=(3.0, 4.0), initial=0.5),
        LinearProfile(times=(0.0, 5.0, 9.0), levels=(0.0, 6.0, 0.0)),
    ):
        again = profile_from_dict(profile_to_dict(profile))
        for t in np.linspace(0.0, 10.0, 41):
            assert again.value(t) == profile.value(t)


def test_profile_dict_rejects_bad_specs():
    with pytest.raises(ConfigError):
        profile_from_dict({"level": 1.0})  # no kind
    with pytest.raises(ConfigError):
        profile_from_dict({"kind": "sinusoid", "level": 1.0})
    with pytest.raises(ConfigError):
        profile_from_dict({"kind": "constant", "level": 1.0, "slope": 2.0})
    with pytest.raises(ConfigError):
        profile_from_dict({"kind": "steps", "times": (1.0,)})  # missing levels


def test_constraints_scalar_and_per_line():
    cons = Constraints(u_max=(10.0, 20.0, 30.0), y_max="inf")
    assert cons.u_max == (10.0, 20.0, 30.0)
    assert np.isinf(cons.y_max)
    with pytest.raises(ConfigError):
        Constraints(u_max=(10.0, 20.0))  # needs one value per line
    with pytest.raises(ConfigError):
        Constraints(u_min=5.0, u_max=1.0)
    with pytest.raises(ConfigError):
        Constraints(y_min=2.0, y_max=1.0)
    with pytest.raises(ConfigError):
        Constraints(du_max_rate=0.0)
    with pytest.raises(ConfigError):
        Constraints(u_max="huge")


def test_scenario_validation():
    refs = (ConstantProfile(1.0),) * 3
    common = dict(name="x", duration=1.0, references=refs)
    with pytest.raises(ConfigError):
        Scenario(**{**common, "duration": 0.0})
    with pytest.raises(ConfigError):
        Scenario(**{**common, "controller": "lqr"})
    with pytest.raises(ConfigError):
        Scenario(name="x", duration=1.0, references=refs[:2])
    with pytest.raises(ConfigError):
        Scenario(**{**common, "noise_std": -0.1})
    with pytest.raises(ConfigError):
        Scenario(**{**common, "substep": 0.2})  # larger than sample_period
    with pytest.raises(ConfigError):
        Scenario(**{**common, "horizon": 0})
    with pytest.raises(ConfigError):
        Scenario(**{**common, "regulator_preset": "imaginary"})
    with pytest.raises(ConfigError):
        Scenario(**{**common, "plant_perturbations": (("r_weird", 1.1),)})
    with pytest.raises(ConfigError):
        Scenario(**{**common, "plant_perturbations": (("r_chip", -1.0),)})


def test_scenario_json_round_trip():
    for name in builtin_names():
        scenario = builtin(name)
        spec = scenario_to_dict(scenario)
        spec = json.loads(json.dumps(spec))  # must survive real JSON
        again = scenario_from_dict(spec)
        assert again.name == scenario.name
        assert again.n_steps == scenario.n_steps
        assert again.constraints == scenario.constraints
        assert again.plant_perturbations == scenario.plant_perturbations
        for t in np.linspace(0.0, scenario.duration, 61):
            np.testing.assert_array_equal(
                again.reference_values(t), scenario.reference_values(t)
            )


def test_unbounded_flow_serializes_as_inf_string():
    spec = scenario_to_dict(builtin("steps-distinct"))
    assert spec["constraints"]["y_max"] == "inf"
    json.dumps(spec)  # plain JSON, no Infinity literals needed


def test_save_load_round_trip(tmp_path):
    scenario = builtin("mismatch-20pct")
    path = tmp_path / "scn.json"
    save_scenario(scenario, path)
    again = load_scenario(path)
    assert again.perturbation_dict() == {
        "r_chip": (1.2, 0.8, 1.2),
        "r_line": (1.2, 0.8, 1.2),
    }
    assert again == scenario


def test_strict_scenario_keys():
    base = scenario_to_dict(builtin("steps-equal"))
    with pytest.raises(ConfigError):
        scenario_from_dict({**base, "turbo": True})
    with pytest.raises(ConfigError):
        scenario_from_dict({"name": "x"})  # missing duration/references
    with pytest.raises(ConfigError):
        scenario_from_dict({**base, "references": base["references"][:2]})
    with pytest.raises(ConfigError):
        scenario_from_dict(
            {**base, "constraints": {**base["constraints"], "z_max": 1.0}}
        )
    with pytest.raises(ConfigError):
        scenario_from_dict({**base, "plant_perturbations": [["r_chip", 1.1]]})
    with pytest.raises(ConfigError):
        scenario_from_dict(["not", "a", "dict"])


def test_builtin_catalogue():
    assert builtin_names() == [
        "flow-bounds",
        "mismatch-20pct",
        "pressure-cap-9500",
        "rate-cap-2000",
        "steps-distinct",
        "steps-equal",
        "triangle-capped",
    ]
    assert builtin("pressure-cap-9500").constraints.u_max == 9_500.0
    assert builtin("triangle-capped").constraints.u_max == 60_000.0
    assert builtin("rate-cap-2000").constraints.du_max_rate == 2_000.0
    assert builtin("flow-bounds").constraints.y_max == (1.0, 1.5, 2.5)
    assert builtin("steps-distinct").n_steps == 200
    assert builtin("triangle-capped").n_steps == 300
    assert builtin("pressure-cap-9500").n_steps == 150
    with pytest.raises(ConfigError):
        builtin("no-such-run")


def test_builtin_reference_shapes():
    distinct = builtin("steps-distinct")
    np.testing.assert_array_equal(distinct.reference_values(0.5), [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(distinct.reference_values(1.0), [1.0, 2.0, 3.0])

    triangle = builtin("triangle-capped")
    for t, level in ((0.0, 0.0), (1.0, 0.0), (7.0, 3.0), (13.0, 6.0),
                     (19.0, 3.0), (25.0, 0.0), (30.0, 0.0)):
        np.testing.assert_allclose(
            triangle.reference_values(t), [level] * 3, atol=1e-12
        )

    equal = builtin("steps-equal")
    np.testing.assert_array_equal(equal.reference_values(5.0), [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(equal.reference_values(15.0), [2.0, 2.0, 2.0])


def test_reference_preview_grid():
    scenario = builtin("steps-distinct")
    preview = scenario.reference_preview(0.7, 5)
    assert preview.shape == (5, 3)
    # rows are t + T ... t + 5T = 0.8 .. 1.2; the step lands at t = 1.0
    np.testing.assert_array_equal(preview[0], [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(preview[2], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(preview[4], [1.0, 2.0, 3.0])


def test_resolve_names_and_paths(tmp_path):
    assert resolve("steps-distinct") == builtin("steps-distinct")
    path = tmp_path / "custom.json"
    save_scenario(builtin("flow-bounds"), path)
    assert resolve(str(path)) == builtin("flow-bounds")
    with pytest.raises(ConfigError):
        resolve("never-saved.json")
