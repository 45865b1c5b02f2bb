"""Magnitude diagnostics and iterative rebalancing of unit choices.

A solution is "balanced" when every state, control, and costate component
peaks within about one order of magnitude of the others.  The score here
measures the spread in decades across those pooled peak magnitudes; the
threshold of 1.0 (one decade) is this library's own construction, chosen
because no sharper numeric criterion exists for "similar orders of
magnitude".

Proposals only rename units: state and control scales absorb the observed
peaks (rounded to one significant figure so the resulting units stay
readable), the cost scale is set from the predicted costate peaks so the
duals land near the target, and event-row scales inherit whatever scale
their pinned variable received.  Costates are never scaled directly;
their balance arrives through the induced factors.
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from .problem import DualTrajectory, OCProblem, Trajectory
from .scaling import (
    ScaleSet,
    descale_dual,
    descale_primal,
    identity_scales,
    scale_set_to_dict,
)
from .solver import (
    IntegratorOptions,
    NewtonOptions,
    SolveResult,
    SolverError,
    _affine_row,
    solve_bvp_full,
)

__all__ = [
    "BalanceError",
    "ComponentStats",
    "MagnitudeReport",
    "magnitude_report",
    "round_1sf",
    "propose_scales",
    "BalanceStep",
    "balance_iterate",
    "magnitude_report_to_dict",
    "save_magnitude_report",
    "balance_history_to_dict",
    "save_balance_history",
]

BALANCED_SCORE = 1.0


class BalanceError(ValueError):
    pass


@dataclasses.dataclass(frozen=True, slots=True)
class ComponentStats:
    name: str
    max_abs: float
    min: float
    max: float


@dataclasses.dataclass(frozen=True)
class MagnitudeReport:
    """Componentwise extrema of one solution plus the decade-spread score.

    States, controls, and costates pool into the score; event multipliers
    and the time axis are reported for context only.  `excluded` names the
    identically zero components left out of the score.  `event_pins` maps
    each event row to the endpoint variable it pins, when the problem was
    supplied to identify them.
    """

    states: tuple[ComponentStats, ...]
    controls: tuple[ComponentStats, ...]
    costates: tuple[ComponentStats, ...]
    event_multipliers: tuple[float, ...]  # absolute values
    time_max_abs: float
    score: float
    excluded: tuple[str, ...]
    label: str
    event_pins: tuple | None = None  # per row: (kind, state index) or None


def _stats(name: str, col: np.ndarray) -> ComponentStats:
    return ComponentStats(
        name, float(np.max(np.abs(col))), float(np.min(col)), float(np.max(col))
    )


def _event_pins(p: OCProblem):
    names = {"t0", "tf"} | {
        f"{pre}_{n}" for n in p.state_names for pre in ("x0", "xf")
    }
    pins = []
    for g in p.event_exprs:
        info = _affine_row(g, names)
        if info is None:
            pins.append(None)
            continue
        var = info[0]
        if var in ("t0", "tf"):
            pins.append((var, -1))
        else:
            prefix, _, base = var.partition("_")
            pins.append((prefix, p.state_names.index(base)))
    return tuple(pins)


def magnitude_report(
    tr: Trajectory, d: DualTrajectory, p: OCProblem | None = None
) -> MagnitudeReport:
    """Componentwise extrema of a solution and its decade-spread score.

    Passing the problem adds component names and the event-pin map that
    later lets a proposal keep event-row scales consistent; without it the
    report uses positional names and proposals leave Pe untouched.
    """
    n = tr.t.shape[0]
    if n == 0:
        raise BalanceError("empty grid")
    if d.costates.shape[0] != n or d.hamiltonian.shape[0] != n:
        raise BalanceError(
            f"trajectory grid has {n} points but dual data does not"
        )
    nx = tr.states.shape[1]
    nu = tr.controls.shape[1]
    if p is not None:
        xnames = list(p.state_names)
        unames = list(p.control_names)
    else:
        xnames = [f"x{i}" for i in range(nx)]
        unames = [f"u{i}" for i in range(nu)]
    states = tuple(_stats(xnames[i], tr.states[:, i]) for i in range(nx))
    controls = tuple(_stats(unames[i], tr.controls[:, i]) for i in range(nu))
    costates = tuple(
        _stats(f"lam_{xnames[i]}", d.costates[:, i]) for i in range(nx)
    )
    pooled = [*states, *controls, *costates]
    excluded = tuple(c.name for c in pooled if c.max_abs == 0.0)
    live = [c.max_abs for c in pooled if c.max_abs > 0.0]
    score = math.log10(max(live) / min(live)) if live else 0.0
    return MagnitudeReport(
        states=states,
        controls=controls,
        costates=costates,
        event_multipliers=tuple(float(abs(v)) for v in d.event_multipliers),
        time_max_abs=float(np.max(np.abs(tr.t))),
        score=score,
        excluded=excluded,
        label=tr.label,
        event_pins=_event_pins(p) if p is not None else None,
    )


def round_1sf(v: float) -> float:
    """Round to one significant figure (designer units stay readable)."""
    if v == 0.0 or not math.isfinite(v):
        return v
    e = math.floor(math.log10(abs(v)))
    m = round(abs(v) / 10.0**e)
    if m == 10:
        m, e = 1, e + 1
    return math.copysign(m * 10.0**e, v)


def propose_scales(
    rep: MagnitudeReport, current: ScaleSet, target: float = 1.0
) -> ScaleSet:
    """New scale set that pushes every component's peak toward the target.

    State, control, and time scales absorb the observed peaks directly;
    the cost scale follows from the predicted costate peaks under the new
    state scales (the product of a variable's scale and its costate's
    scale is pinned, so enlarging one shrinks the other).  All factors are
    rounded to one significant figure; zero peaks leave their scale alone.
    """
    if not target > 0.0:
        raise BalanceError(f"target must be positive, got {target}")
    if len(rep.states) != len(current.Px) or len(rep.controls) != len(current.Pu):
        raise BalanceError("report and scale set disagree on component counts")
    peaks = [c.max_abs for c in (*rep.states, *rep.controls, *rep.costates)]
    if not any(m > 0.0 for m in peaks) and rep.time_max_abs == 0.0:
        raise BalanceError("degenerate report: every component is zero")

    def absorb(scale, peak):
        return round_1sf(scale * peak / target) if peak > 0.0 else scale

    Px = tuple(absorb(current.Px[i], rep.states[i].max_abs) for i in range(len(current.Px)))
    Pu = tuple(absorb(current.Pu[i], rep.controls[i].max_abs) for i in range(len(current.Pu)))
    pt = absorb(current.pt, rep.time_max_abs)
    # predicted costate peaks under the new state scales, current cost scale
    predicted = [
        rep.costates[i].max_abs * Px[i] / current.Px[i]
        for i in range(len(current.Px))
        if rep.costates[i].max_abs > 0.0
    ]
    if predicted:
        geo = math.exp(sum(math.log(m) for m in predicted) / len(predicted))
        pJ = round_1sf(current.pJ * geo / target)
    else:
        pJ = current.pJ
    Pe = list(current.Pe)
    if rep.event_pins is not None:
        if len(rep.event_pins) != len(Pe):
            raise BalanceError("event pin map does not match the scale set")
        for i, pin in enumerate(rep.event_pins):
            if pin is None:
                continue
            kind, idx = pin
            Pe[i] = pt if kind in ("t0", "tf") else Px[idx]
    return dataclasses.replace(
        current, Px=Px, Pu=Pu, pt=pt, pJ=pJ, Pe=tuple(Pe)
    )


# ---------------------------------------------------------------------------
# iteration
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class BalanceStep:
    scales: ScaleSet
    report: MagnitudeReport | None
    solved: bool
    message: str = ""


def _warm_guess(tr: Trajectory, d: DualTrajectory, s: ScaleSet) -> dict:
    if s.is_identity():
        lam0, tf = d.costates[0], tr.t[-1]
    else:
        lam0 = descale_dual(d, s).costates[0]
        tf = descale_primal(tr, s).t[-1]
    return {"lambda0": [float(v) for v in lam0], "tf": float(tf)}


def balance_iterate(
    p: OCProblem,
    s0: ScaleSet,
    guess: dict,
    max_iter: int = 3,
    opts: IntegratorOptions = IntegratorOptions(),
    newton_opts: NewtonOptions = NewtonOptions(),
) -> tuple[ScaleSet, Trajectory, DualTrajectory, tuple[BalanceStep, ...]]:
    """Solve, score, and rescale until balanced or out of proposals.

    The first solve must succeed; a later solve failing under a proposed
    set ends the loop with that failure recorded, and the best-scoring
    iterate seen so far is returned.  Between iterations the converged
    unknowns are carried over (descaled back to original units) so each
    re-solve starts close.  `max_iter` caps the number of proposals.
    """
    if s0 is None:
        s0 = identity_scales(p)
    out = solve_bvp_full(p, s0, guess, opts=opts, newton_opts=newton_opts)
    s = s0
    steps: list[BalanceStep] = []
    best: tuple[float, ScaleSet, SolveResult] | None = None
    for _ in range(max_iter + 1):
        rep = magnitude_report(out.trajectory, out.dual, p)
        steps.append(BalanceStep(s, rep, True))
        if best is None or rep.score < best[0]:
            best = (rep.score, s, out)
        if rep.score <= BALANCED_SCORE or len(steps) > max_iter:
            break
        proposal = propose_scales(rep, s)
        if proposal == s:
            break
        warm = _warm_guess(out.trajectory, out.dual, s)
        try:
            out = solve_bvp_full(p, proposal, warm, opts=opts, newton_opts=newton_opts)
        except SolverError as err:
            steps.append(BalanceStep(proposal, None, False, str(err)))
            break
        s = proposal
    _, best_s, best_out = best
    return best_s, best_out.trajectory, best_out.dual, tuple(steps)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _stats_dict(c: ComponentStats) -> dict:
    return {"name": c.name, "max_abs": c.max_abs, "min": c.min, "max": c.max}


def magnitude_report_to_dict(rep: MagnitudeReport) -> dict:
    return {
        "label": rep.label,
        "score": rep.score,
        "states": [_stats_dict(c) for c in rep.states],
        "controls": [_stats_dict(c) for c in rep.controls],
        "costates": [_stats_dict(c) for c in rep.costates],
        "event_multiplier_abs": list(rep.event_multipliers),
        "time_max_abs": rep.time_max_abs,
        "excluded": list(rep.excluded),
        "event_pins": None
        if rep.event_pins is None
        else [None if q is None else [q[0], q[1]] for q in rep.event_pins],
    }


def save_magnitude_report(rep: MagnitudeReport, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(magnitude_report_to_dict(rep), fh, indent=2, sort_keys=True)
        fh.write("\n")


def balance_history_to_dict(steps) -> list:
    records = []
    for st in steps:
        records.append(
            {
                "scales": scale_set_to_dict(st.scales),
                "solved": bool(st.solved),
                "score": None if st.report is None else st.report.score,
                "report": None
                if st.report is None
                else magnitude_report_to_dict(st.report),
                "message": st.message,
            }
        )
    return records


def save_balance_history(steps, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(balance_history_to_dict(steps), fh, indent=2, sort_keys=True)
        fh.write("\n")
