"""Problem container validation, JSON forms, and sampled-solution I/O."""

from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest

from ocscale import expr as ex
from ocscale import problem as pb

BRACH = pb.brachistochrone()


def _minimal_dict():
    return {
        "states": ["a", "b"],
        "endpoint_cost": "tf",
        "dynamics": ["b", "0 - a"],
    }


# ---------------------------------------------------------------------------
# structural validation
# ---------------------------------------------------------------------------


def test_brachistochrone_validates():
    pb.validate(BRACH)
    assert BRACH.nx == 3 and BRACH.nu == 1
    assert BRACH.ne == 6 and BRACH.nh == 0
    assert BRACH.name == "brachistochrone"


def test_stage_and_endpoint_symbols():
    assert BRACH.stage_symbols() == frozenset({"x", "y", "v", "theta", "t"})
    assert "x0_x" in BRACH.endpoint_symbols()
    assert "xf_v" in BRACH.endpoint_symbols()
    assert "t0" in BRACH.endpoint_symbols()


@pytest.mark.parametrize(
    "mutation, match",
    [
        ({"states": ["t", "b"]}, "reserved"),
        ({"states": ["sin", "b"]}, "reserved"),
        ({"states": ["a", "a"]}, "unique"),
        ({"states": ["2bad", "b"]}, "invalid variable name"),
        ({"states": []}, "at least one state"),
        ({"dynamics": ["b"]}, "dynamics has 1 components for 2 states"),
        ({"dynamics": ["b", "zz"]}, "unknown symbol 'zz'"),
        ({"endpoint_cost": "xf_zz"}, "unknown symbol 'xf_zz'"),
    ],
)
def test_validate_rejects(mutation, match):
    data = {**_minimal_dict(), **mutation}
    with pytest.raises(pb.ProblemError, match=match):
        pb.problem_from_dict(data)


def test_validate_event_bounds():
    data = {
        **_minimal_dict(),
        "events": {"exprs": ["x0_a"], "lower": [0.0], "upper": []},
    }
    with pytest.raises(pb.ProblemError, match="bounds do not match"):
        pb.problem_from_dict(data)
    data["events"] = {"exprs": ["x0_a"], "lower": [1.0], "upper": [0.0]}
    with pytest.raises(pb.ProblemError, match="out of order"):
        pb.problem_from_dict(data)
    data["events"] = {"exprs": ["x0_a"], "lower": [float("-inf")], "upper": [0.0]}
    with pytest.raises(pb.ProblemError, match="not finite"):
        pb.problem_from_dict(data)


def test_validate_unit_label_counts():
    bad = dataclasses.replace(
        BRACH, units=pb.UnitSystem(("m",), ("rad",), "s", "s")
    )
    with pytest.raises(pb.ProblemError, match="unit labels"):
        pb.validate(bad)


# ---------------------------------------------------------------------------
# JSON forms
# ---------------------------------------------------------------------------


def test_minimal_dict_fills_defaults():
    p = pb.problem_from_dict(_minimal_dict())
    assert p.nu == 0 and p.ne == 0 and p.nh == 0
    assert ex.to_text(p.running_cost) == "0"
    assert p.units.state_units == ("", "")
    assert p.name == ""


def test_dict_round_trip_is_identity():
    # control_law is excluded from equality, so the closed-form-free copy
    # coming back from the dict still compares equal
    data = pb.problem_to_dict(BRACH)
    again = pb.problem_from_dict(data)
    assert again == BRACH
    assert again.control_law is None


def test_file_round_trip(tmp_path):
    path = tmp_path / "p.json"
    pb.save_problem(BRACH, str(path))
    again = pb.load_problem(str(path))
    assert again == BRACH


def test_bad_expression_reported(tmp_path):
    data = {**_minimal_dict(), "dynamics": ["b", "(a"]}
    with pytest.raises(pb.ProblemError, match="bad expression"):
        pb.problem_from_dict(data)


def test_bad_json_reported(tmp_path):
    path = tmp_path / "p.json"
    path.write_text("{not json")
    with pytest.raises(pb.ProblemError, match="bad problem file"):
        pb.load_problem(str(path))


def test_missing_required_key_reported():
    with pytest.raises(pb.ProblemError, match="bad problem file"):
        pb.problem_from_dict({"states": ["a"]})


# ---------------------------------------------------------------------------
# sampled containers
# ---------------------------------------------------------------------------


def _traj(n=5, nx=2, nu=1, label="unscaled"):
    t = np.linspace(0.0, 1.0, n)
    return pb.Trajectory(
        t=t,
        states=np.ones((n, nx)),
        controls=np.zeros((n, nu)),
        label=label,
    )


def test_trajectory_rejects_bad_label():
    with pytest.raises(pb.ProblemError, match="label"):
        _traj(label="physical")


def test_trajectory_rejects_decreasing_grid():
    with pytest.raises(pb.ProblemError, match="strictly increasing"):
        pb.Trajectory(
            t=[0.0, 1.0, 1.0],
            states=np.ones((3, 1)),
            controls=np.zeros((3, 0)),
            label="unscaled",
        )


def test_trajectory_rejects_count_mismatch():
    with pytest.raises(pb.ProblemError, match="sample counts"):
        pb.Trajectory(
            t=[0.0, 1.0],
            states=np.ones((3, 1)),
            controls=np.zeros((2, 0)),
            label="unscaled",
        )


def test_trajectory_arrays_are_frozen():
    tr = _traj()
    with pytest.raises(ValueError):
        tr.states[0, 0] = 7.0
    with pytest.raises(ValueError):
        tr.t[0] = -1.0


def test_trajectory_empty_controls_get_shape():
    tr = pb.Trajectory(
        t=[0.0, 1.0], states=np.ones((2, 1)), controls=[], label="unscaled"
    )
    assert tr.controls.shape == (2, 0)


def test_dual_rejects_mismatched_hamiltonian():
    with pytest.raises(pb.ProblemError, match="Hamiltonian samples"):
        pb.DualTrajectory(
            costates=np.ones((4, 2)),
            path_multipliers=np.zeros((4, 0)),
            event_multipliers=np.zeros(1),
            hamiltonian=np.zeros(3),
            label="unscaled",
        )


def test_dual_rejects_mismatched_path_multipliers():
    with pytest.raises(pb.ProblemError, match="path multiplier"):
        pb.DualTrajectory(
            costates=np.ones((4, 2)),
            path_multipliers=np.zeros((3, 1)),
            event_multipliers=np.zeros(1),
            hamiltonian=np.zeros(4),
            label="unscaled",
        )


# ---------------------------------------------------------------------------
# delimited I/O
# ---------------------------------------------------------------------------


def test_trajectory_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    n = 7
    tr = pb.Trajectory(
        t=np.sort(rng.uniform(0, 30, n)),
        states=rng.standard_normal((n, 3)) * 10.0 ** rng.integers(-8, 8, (n, 3)),
        controls=rng.standard_normal((n, 1)),
        label="unscaled",
    )
    path = tmp_path / "tr.csv"
    pb.save_trajectory(tr, BRACH, str(path))
    again = pb.load_trajectory(str(path), BRACH)
    # 17 significant digits reproduce every double exactly
    assert np.array_equal(again.t, tr.t)
    assert np.array_equal(again.states, tr.states)
    assert np.array_equal(again.controls, tr.controls)


def test_trajectory_header_checked(tmp_path):
    path = tmp_path / "tr.csv"
    path.write_text("t,x,y\n0,1,2\n1,2,3\n")
    with pytest.raises(pb.ProblemError, match="header mismatch"):
        pb.load_trajectory(str(path), BRACH)


def test_dual_round_trip_with_sidecar(tmp_path):
    rng = np.random.default_rng(1)
    n = 6
    t = np.linspace(0.0, 2.0, n)
    d = pb.DualTrajectory(
        costates=rng.standard_normal((n, 3)),
        path_multipliers=np.zeros((n, 0)),
        event_multipliers=rng.standard_normal(6),
        hamiltonian=rng.standard_normal(n),
        label="unscaled",
    )
    dual_path = tmp_path / "dual.csv"
    nu_path = tmp_path / "nu.json"
    pb.save_dual(d, t, str(dual_path))
    pb.save_event_multipliers(d.event_multipliers, str(nu_path))
    nu = pb.load_event_multipliers(str(nu_path))
    again = pb.load_dual(str(dual_path), BRACH, event_multipliers=nu)
    assert np.array_equal(again.costates, d.costates)
    assert np.array_equal(again.hamiltonian, d.hamiltonian)
    assert np.array_equal(again.event_multipliers, d.event_multipliers)
    assert again.path_multipliers.shape == (n, 0)


def test_dual_header_checked(tmp_path):
    path = tmp_path / "dual.csv"
    path.write_text("t,lam_1,lam_2,H\n0,1,2,3\n1,2,3,4\n")
    with pytest.raises(pb.ProblemError, match="header mismatch"):
        pb.load_dual(str(path), BRACH)


def test_dual_loads_zero_multipliers_without_sidecar(tmp_path):
    t = np.linspace(0.0, 1.0, 3)
    d = pb.DualTrajectory(
        costates=np.ones((3, 3)),
        path_multipliers=np.zeros((3, 0)),
        event_multipliers=np.ones(6),
        hamiltonian=np.zeros(3),
        label="unscaled",
    )
    path = tmp_path / "dual.csv"
    pb.save_dual(d, t, str(path))
    again = pb.load_dual(str(path), BRACH)
    assert np.array_equal(again.event_multipliers, np.zeros(6))
