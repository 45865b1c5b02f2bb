"""Magnitude reports, scale proposals, and the rebalancing loop."""

import dataclasses
import json

import numpy as np
import pytest

from conftest import SHIPPED_GUESS
from ocscale import balance as ba
from ocscale import scaling as sc
from ocscale import solver as sv
from ocscale.problem import DualTrajectory, Trajectory


def _pooled(rep):
    return (*rep.states, *rep.controls, *rep.costates)


def _synthetic(nx=2, nu=1, n=5, state_cols=None, control_cols=None,
               costate_cols=None, label="unscaled"):
    t = np.linspace(0.0, 1.0, n)
    states = np.ones((n, nx)) if state_cols is None else np.column_stack(state_cols)
    controls = np.ones((n, nu)) if control_cols is None else np.column_stack(control_cols)
    costates = np.zeros((n, nx)) if costate_cols is None else np.column_stack(costate_cols)
    tr = Trajectory(t=t, states=states, controls=controls, label=label)
    d = DualTrajectory(
        costates=costates,
        path_multipliers=np.zeros((n, 0)),
        event_multipliers=np.zeros(0),
        hamiltonian=np.zeros(n),
        label=label,
    )
    return tr, d


# ---------------------------------------------------------------------------
# magnitude_report
# ---------------------------------------------------------------------------


def test_unscaled_peaks_match_known_solution(brach, unscaled_solution):
    rep = ba.magnitude_report(
        unscaled_solution.trajectory, unscaled_solution.dual, brach
    )
    peaks = [c.max_abs for c in rep.states]
    assert peaks[0] == pytest.approx(1000.0, rel=1e-6)
    assert peaks[1] == pytest.approx(318.32, rel=1e-3)
    assert peaks[2] == pytest.approx(78.99, rel=1e-3)
    assert rep.controls[0].max_abs == pytest.approx(3.0855, rel=1e-3)
    assert rep.time_max_abs == pytest.approx(24.8693, rel=1e-4)
    # photons to kilometres: five decades of spread before balancing
    assert 4.5 < rep.score < 5.0
    assert rep.excluded == ()


def test_report_names_and_event_pins(brach, unscaled_solution):
    tr, d = unscaled_solution.trajectory, unscaled_solution.dual
    rep = ba.magnitude_report(tr, d, brach)
    assert [c.name for c in rep.states] == ["x", "y", "v"]
    assert [c.name for c in rep.controls] == ["theta"]
    assert [c.name for c in rep.costates] == ["lam_x", "lam_y", "lam_v"]
    assert rep.event_pins == (
        ("t0", -1), ("x0", 0), ("x0", 1), ("x0", 2), ("xf", 0), ("xf", 1),
    )
    bare = ba.magnitude_report(tr, d)
    assert [c.name for c in bare.states] == ["x0", "x1", "x2"]
    assert bare.event_pins is None
    assert bare.score == rep.score


def test_zero_dual_components_are_excluded():
    tr, d = _synthetic(
        state_cols=[2.0 * np.ones(5), 0.5 * np.ones(5)],
        control_cols=[np.ones(5)],
    )
    rep = ba.magnitude_report(tr, d)
    assert rep.excluded == ("lam_x0", "lam_x1")
    # score falls back to the primal spread
    assert rep.score == pytest.approx(np.log10(4.0))


def test_all_zero_solution_scores_zero_with_note():
    tr, d = _synthetic(
        state_cols=[np.zeros(5), np.zeros(5)], control_cols=[np.zeros(5)]
    )
    rep = ba.magnitude_report(tr, d)
    assert rep.score == 0.0
    assert len(rep.excluded) == 5


def test_empty_grid_rejected():
    # Trajectory itself refuses empty grids, so the report's own guard is
    # only reachable through stand-ins
    from types import SimpleNamespace

    tr = SimpleNamespace(
        t=np.zeros(0), states=np.zeros((0, 1)), controls=np.zeros((0, 1)),
        label="unscaled",
    )
    d = SimpleNamespace(
        costates=np.zeros((0, 1)), hamiltonian=np.zeros(0),
        event_multipliers=np.zeros(0),
    )
    with pytest.raises(ba.BalanceError, match="empty"):
        ba.magnitude_report(tr, d)


def test_mismatched_grids_rejected():
    tr, _ = _synthetic(n=5)
    _, d = _synthetic(n=7)
    with pytest.raises(ba.BalanceError, match="grid"):
        ba.magnitude_report(tr, d)


def test_set2_extrema_within_window(brach, set2_solution):
    _, out = set2_solution
    rep = ba.magnitude_report(out.trajectory, out.dual, brach)
    for c in _pooled(rep):
        assert -4.0 <= c.min <= c.max <= 4.0
    assert all(v <= 4.0 for v in rep.event_multipliers)
    assert rep.score <= 1.0


def test_set3_large_duals_dominate_the_score(brach, set3_solution):
    _, out = set3_solution
    rep = ba.magnitude_report(out.trajectory, out.dual, brach)
    # primal side looks tame under this unit choice
    assert all(c.max_abs <= 1.0 + 1e-9 for c in rep.states)
    # but the induced costate factors are tiny, so the duals blow up
    worst = max(_pooled(rep), key=lambda c: c.max_abs)
    assert worst.name == "lam_v"
    assert worst.max_abs > 100.0
    assert rep.score > 1.0
    for c in rep.costates:
        assert -220.0 <= c.min <= c.max <= 110.0


# ---------------------------------------------------------------------------
# round_1sf / propose_scales
# ---------------------------------------------------------------------------


def test_round_one_significant_figure():
    cases = [
        (318.3, 300.0), (79.0, 80.0), (24.87, 20.0), (49.97, 50.0),
        (3.086, 3.0), (9.51e-4, 1e-3), (-24.9, -20.0), (0.0, 0.0),
        (9.99e9, 1e10), (1.0, 1.0),
    ]
    for v, want in cases:
        assert ba.round_1sf(v) == pytest.approx(want, rel=1e-12), v


def test_proposal_from_unscaled_report(brach, unscaled_solution):
    rep = ba.magnitude_report(
        unscaled_solution.trajectory, unscaled_solution.dual, brach
    )
    prop = ba.propose_scales(rep, sc.identity_scales(brach))
    assert prop.Px == (1000.0, 300.0, 80.0)
    assert prop.Pu == (3.0,)
    assert prop.pt == 20.0
    assert prop.pJ == 50.0
    # event rows wear the scale of whatever endpoint variable they pin
    assert prop.Pe == (20.0, 1000.0, 300.0, 80.0, 1000.0, 300.0)
    assert prop.qx == (0.0, 0.0, 0.0)
    assert prop.qt == 0.0


def _all_ones_report(rep):
    one = lambda c: dataclasses.replace(c, max_abs=1.0)
    return dataclasses.replace(
        rep,
        states=tuple(one(c) for c in rep.states),
        controls=tuple(one(c) for c in rep.controls),
        costates=tuple(one(c) for c in rep.costates),
        time_max_abs=1.0,
    )


def test_peak_one_solution_is_a_fixed_point(brach, set1_solution,
                                            set2_solution):
    s1, out1 = set1_solution
    rep = _all_ones_report(
        ba.magnitude_report(out1.trajectory, out1.dual, brach)
    )
    # set 1 entries are all single-figure numbers, so nothing moves
    assert ba.propose_scales(rep, s1) == s1
    # set 2 has Px_y = 160, which the one-figure grid snaps to 200; every
    # entry stays within its own rounding quantum
    s2, _ = set2_solution
    prop = ba.propose_scales(rep, s2)
    for old, new in zip(
        (*s2.Px, *s2.Pu, s2.pt, s2.pJ), (*prop.Px, *prop.Pu, prop.pt, prop.pJ)
    ):
        assert abs(new - old) <= 10.0 ** np.floor(np.log10(abs(old)))


def test_zero_peak_leaves_its_scale_alone(brach, unscaled_solution):
    rep = ba.magnitude_report(
        unscaled_solution.trajectory, unscaled_solution.dual, brach
    )
    dead = dataclasses.replace(rep.states[1], max_abs=0.0)
    rep = dataclasses.replace(
        rep, states=(rep.states[0], dead, rep.states[2])
    )
    prop = ba.propose_scales(rep, sc.identity_scales(brach))
    assert prop.Px[1] == 1.0
    assert prop.Px[0] == 1000.0 and prop.Px[2] == 80.0


def test_proposal_rejects_degenerate_input(brach, unscaled_solution):
    tr, d = _synthetic(
        state_cols=[np.zeros(5), np.zeros(5)], control_cols=[np.zeros(5)]
    )
    rep = ba.magnitude_report(tr, d)
    s = sc.scale_set_from_dict({}, brach)
    with pytest.raises(ba.BalanceError, match="component counts"):
        ba.propose_scales(rep, s)
    good = ba.magnitude_report(
        unscaled_solution.trajectory, unscaled_solution.dual, brach
    )
    with pytest.raises(ba.BalanceError, match="target"):
        ba.propose_scales(good, s, target=0.0)
    all_zero = dataclasses.replace(
        rep,
        states=rep.states[:1] * 2 + rep.states[:1],
        controls=rep.controls,
        time_max_abs=0.0,
    )
    with pytest.raises(ba.BalanceError, match="degenerate"):
        ba.propose_scales(all_zero, s)


def test_proposal_without_pin_map_keeps_event_rows(brach, unscaled_solution):
    rep = ba.magnitude_report(
        unscaled_solution.trajectory, unscaled_solution.dual
    )
    prop = ba.propose_scales(rep, sc.identity_scales(brach))
    assert prop.Px == (1000.0, 300.0, 80.0)
    assert prop.Pe == (1.0,) * 6


# ---------------------------------------------------------------------------
# invariance on data
# ---------------------------------------------------------------------------


def test_unit_relabeling_preserves_descaled_solution(brach, set1_solution):
    s1, out = set1_solution
    rep = ba.magnitude_report(out.trajectory, out.dual, brach)
    prop = ba.propose_scales(rep, s1)

    before_tr = sc.descale_primal(out.trajectory, s1)
    before_d = sc.descale_dual(out.dual, s1)
    again_tr = sc.descale_primal(sc.rescale_primal(before_tr, prop), prop)
    again_d = sc.descale_dual(sc.rescale_dual(before_d, prop), prop)

    assert np.max(np.abs(again_tr.states - before_tr.states)) <= 1e-9
    assert np.max(np.abs(again_tr.t - before_tr.t)) <= 1e-9
    assert np.max(np.abs(again_d.costates - before_d.costates)) <= 1e-9
    assert np.max(np.abs(again_d.event_multipliers
                         - before_d.event_multipliers)) <= 1e-9

    ranked_before = ba.magnitude_report(before_tr, before_d, brach)
    ranked_again = ba.magnitude_report(again_tr, again_d, brach)
    argmax = lambda r: max(_pooled(r), key=lambda c: c.max_abs).name
    assert argmax(ranked_before) == argmax(ranked_again)


def test_costate_seesaw_on_data(brach, unscaled_solution):
    s1 = sc.builtin_scale_set("set1", brach)
    doubled = dataclasses.replace(s1, Px=tuple(2.0 * v for v in s1.Px))
    tr, d = unscaled_solution.trajectory, unscaled_solution.dual

    ra = ba.magnitude_report(
        sc.rescale_primal(tr, s1), sc.rescale_dual(d, s1), brach
    )
    rb = ba.magnitude_report(
        sc.rescale_primal(tr, doubled), sc.rescale_dual(d, doubled), brach
    )
    for i in range(3):
        assert rb.states[i].max_abs == pytest.approx(
            0.5 * ra.states[i].max_abs, rel=1e-12
        )
        assert rb.costates[i].max_abs == pytest.approx(
            2.0 * ra.costates[i].max_abs, rel=1e-12
        )
        # the product of a peak and its dual peak never feels the rescale
        assert rb.states[i].max_abs * rb.costates[i].max_abs == pytest.approx(
            ra.states[i].max_abs * ra.costates[i].max_abs, rel=1e-12
        )


# ---------------------------------------------------------------------------
# balance_iterate
# ---------------------------------------------------------------------------


def test_balance_iterate_from_set1(brach):
    s1 = sc.builtin_scale_set("set1", brach)
    best_s, tr, d, steps = ba.balance_iterate(brach, s1, SHIPPED_GUESS)
    assert steps[0].scales == s1
    assert all(st.solved for st in steps)
    # one proposal settles it; the next proposal would reproduce the same
    # set, so the loop stops at the fixed point
    assert len(steps) == 2
    assert steps[0].report.score > 2.0
    assert steps[1].report.score <= 1.2
    assert best_s.Px == (1000.0, 300.0, 80.0)
    assert best_s.Pu == (3.0,)
    assert best_s.pt == 20.0
    assert best_s.pJ == 50.0
    assert ba.magnitude_report(tr, d, brach).score == steps[1].report.score


def test_balance_iterate_returns_immediately_when_balanced(brach):
    s2 = sc.builtin_scale_set("set2", brach)
    best_s, _, _, steps = ba.balance_iterate(brach, s2, SHIPPED_GUESS)
    assert len(steps) == 1
    assert best_s == s2
    assert steps[0].report.score <= 1.0


def test_balance_iterate_from_identity_lands_within_a_decade(brach):
    best_s, tr, d, steps = ba.balance_iterate(brach, None, SHIPPED_GUESS)
    rep = ba.magnitude_report(tr, d, brach)
    for c in _pooled(rep):
        assert 0.1 <= c.max_abs <= 10.0
    assert rep.score <= 1.2
    assert steps[0].scales.is_identity()


def test_balance_iterate_keeps_partial_history_on_failure(brach, monkeypatch):
    s1 = sc.builtin_scale_set("set1", brach)
    real = sv.solve_bvp_full
    calls = []

    def flaky(*args, **kwargs):
        calls.append(None)
        if len(calls) > 1:
            raise sv.SolverError("newton ran out of iterations")
        return real(*args, **kwargs)

    monkeypatch.setattr(ba, "solve_bvp_full", flaky)
    best_s, tr, d, steps = ba.balance_iterate(brach, s1, SHIPPED_GUESS)
    assert best_s == s1
    assert len(steps) == 2
    assert steps[0].solved and not steps[1].solved
    assert steps[1].report is None
    assert "newton" in steps[1].message
    assert tr.t.shape[0] == 1001


def test_balance_iterate_max_iter_zero_only_reports(brach):
    s1 = sc.builtin_scale_set("set1", brach)
    best_s, _, _, steps = ba.balance_iterate(
        brach, s1, SHIPPED_GUESS, max_iter=0
    )
    assert len(steps) == 1
    assert best_s == s1
    assert steps[0].report.score > 1.0


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_history_round_trips_through_json(brach, tmp_path, monkeypatch):
    s1 = sc.builtin_scale_set("set1", brach)
    real = sv.solve_bvp_full
    calls = []

    def flaky(*args, **kwargs):
        calls.append(None)
        if len(calls) > 1:
            raise sv.SolverError("boom")
        return real(*args, **kwargs)

    monkeypatch.setattr(ba, "solve_bvp_full", flaky)
    _, _, _, steps = ba.balance_iterate(brach, s1, SHIPPED_GUESS)

    path = tmp_path / "balance_history.json"
    ba.save_balance_history(steps, str(path))
    records = json.loads(path.read_text())
    assert len(records) == 2
    assert records[0]["solved"] is True
    assert records[0]["score"] == pytest.approx(steps[0].report.score)
    assert records[0]["scales"]["Px"] == [100.0, 20.0, 10.0]
    assert records[1]["solved"] is False
    assert records[1]["score"] is None
    assert records[1]["report"] is None
    assert records[1]["message"] == "boom"


def test_magnitude_report_round_trips_through_json(brach, unscaled_solution,
                                                   tmp_path):
    rep = ba.magnitude_report(
        unscaled_solution.trajectory, unscaled_solution.dual, brach
    )
    path = tmp_path / "magnitude.json"
    ba.save_magnitude_report(rep, str(path))
    data = json.loads(path.read_text())
    assert data["score"] == pytest.approx(rep.score)
    assert data["states"][0]["name"] == "x"
    assert data["states"][0]["max_abs"] == pytest.approx(1000.0, rel=1e-6)
    assert data["event_pins"][1] == ["x0", 0]
    assert data["excluded"] == []
