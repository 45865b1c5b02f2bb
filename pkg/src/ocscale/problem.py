"""Optimal control problem container and its serialized forms.

A problem is a Bolza statement built from expression trees: endpoint cost
E(x0, xf, t0, tf), running cost F(x, u, t), dynamics f(x, u, t), event
functions e(x0, xf, t0, tf) with lower/upper bounds, and path functions
h(x, u, t) with bounds.  Endpoint expressions name their variables
x0_<state>, xf_<state>, t0, tf; path-stage expressions use the declared
state/control names plus t.  Fixed endpoint values are expressed as event
rows with equal bounds.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import expr as ex

__all__ = [
    "ProblemError",
    "UnitSystem",
    "OCProblem",
    "Trajectory",
    "DualTrajectory",
    "validate",
    "brachistochrone",
    "load_problem",
    "save_problem",
    "problem_to_dict",
    "problem_from_dict",
    "save_trajectory",
    "load_trajectory",
    "save_dual",
    "load_dual",
    "save_event_multipliers",
    "load_event_multipliers",
]

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_RESERVED = {"t", "t0", "tf"} | set(ex.UNARY_FUNCTIONS) | set(ex.BINARY_FUNCTIONS)

LABELS = ("unscaled", "scaled", "descaled")


class ProblemError(ValueError):
    """Malformed problem data; the message names the failing check."""


@dataclass(frozen=True, slots=True)
class UnitSystem:
    """Free-form unit labels attached to a problem (documentation only)."""

    state_units: tuple[str, ...]
    control_units: tuple[str, ...]
    cost_unit: str
    time_unit: str


@dataclass(frozen=True, slots=True)
class OCProblem:
    state_names: tuple[str, ...]
    control_names: tuple[str, ...]
    endpoint_cost: ex.Expr
    running_cost: ex.Expr
    dynamics: tuple[ex.Expr, ...]
    event_exprs: tuple[ex.Expr, ...]
    event_lower: tuple[float, ...]
    event_upper: tuple[float, ...]
    path_exprs: tuple[ex.Expr, ...]
    path_lower: tuple[float, ...]
    path_upper: tuple[float, ...]
    units: UnitSystem
    name: str = ""
    # optional pointwise minimizer of the Hamiltonian in the control slot;
    # attached by builders that know a closed form, never serialized
    control_law: Optional[Callable] = field(default=None, compare=False)

    @property
    def nx(self) -> int:
        return len(self.state_names)

    @property
    def nu(self) -> int:
        return len(self.control_names)

    @property
    def ne(self) -> int:
        return len(self.event_exprs)

    @property
    def nh(self) -> int:
        return len(self.path_exprs)

    def stage_symbols(self) -> frozenset[str]:
        return frozenset(self.state_names) | frozenset(self.control_names) | {"t"}

    def endpoint_symbols(self) -> frozenset[str]:
        names = {f"x0_{n}" for n in self.state_names}
        names |= {f"xf_{n}" for n in self.state_names}
        names |= {"t0", "tf"}
        return frozenset(names)


def validate(p: OCProblem) -> None:
    """Raise ProblemError naming the first failed structural check."""
    names = list(p.state_names) + list(p.control_names)
    for n in names:
        if not _NAME_RE.match(n):
            raise ProblemError(f"invalid variable name {n!r}")
        if n in _RESERVED:
            raise ProblemError(f"variable name {n!r} is reserved")
    if len(set(names)) != len(names):
        raise ProblemError("state and control names must be unique")
    if len(p.state_names) == 0:
        raise ProblemError("at least one state is required")
    if len(p.dynamics) != p.nx:
        raise ProblemError(
            f"dynamics has {len(p.dynamics)} components for {p.nx} states"
        )
    for label, exprs, lower, upper in (
        ("event", p.event_exprs, p.event_lower, p.event_upper),
        ("path", p.path_exprs, p.path_lower, p.path_upper),
    ):
        if len(lower) != len(exprs) or len(upper) != len(exprs):
            raise ProblemError(f"{label} bounds do not match {label} expressions")
        for k, (lo, hi) in enumerate(zip(lower, upper)):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ProblemError(f"{label} bound {k} is not finite")
            if lo > hi:
                raise ProblemError(f"{label} bounds {k} are out of order")
    stage = p.stage_symbols()
    for what, e in (("running_cost", p.running_cost), *(
        (f"dynamics[{i}]", d) for i, d in enumerate(p.dynamics)
    ), *((f"path[{i}]", h) for i, h in enumerate(p.path_exprs))):
        extra = ex.variables(e) - stage
        if extra:
            raise ProblemError(f"{what} references unknown symbol {sorted(extra)[0]!r}")
    endpoint = p.endpoint_symbols()
    for what, e in (("endpoint_cost", p.endpoint_cost), *(
        (f"events[{i}]", g) for i, g in enumerate(p.event_exprs)
    )):
        extra = ex.variables(e) - endpoint
        if extra:
            raise ProblemError(f"{what} references unknown symbol {sorted(extra)[0]!r}")
    if len(p.units.state_units) != p.nx or len(p.units.control_units) != p.nu:
        raise ProblemError("unit labels do not match declared dimensions")


# ---------------------------------------------------------------------------
# Built-in benchmark
# ---------------------------------------------------------------------------

_BRACHISTOCHRONE_G = 9.8


def _brachistochrone_control(lam: np.ndarray, x: np.ndarray, t: float) -> np.ndarray:
    # minimizes lam_x v sin(u) + (lam_y v + lam_v g) cos(u) in closed form
    a = lam[0] * x[2]
    b = lam[1] * x[2] + lam[2] * _BRACHISTOCHRONE_G
    return np.array([math.atan2(-a, -b)])


def brachistochrone() -> OCProblem:
    """Minimum-time bead on a wire from the origin to (1000, 1) meters.

    States (x, y, v) with y measured downward, control is the wire angle.
    The final crossrange is three orders of magnitude larger than the
    final depth, which is what makes this instance a scaling stress test.
    """
    states = ("x", "y", "v")
    dynamics = tuple(
        ex.parse(s) for s in ("v*sin(theta)", "v*cos(theta)", "9.8*cos(theta)")
    )
    events = tuple(
        ex.parse(s) for s in ("t0", "x0_x", "x0_y", "x0_v", "xf_x", "xf_y")
    )
    bounds = (0.0, 0.0, 0.0, 0.0, 1000.0, 1.0)
    return OCProblem(
        state_names=states,
        control_names=("theta",),
        endpoint_cost=ex.parse("tf"),
        running_cost=ex.const(0.0),
        dynamics=dynamics,
        event_exprs=events,
        event_lower=bounds,
        event_upper=bounds,
        path_exprs=(),
        path_lower=(),
        path_upper=(),
        units=UnitSystem(
            state_units=("meters", "meters", "meters/seconds"),
            control_units=("radians",),
            cost_unit="seconds",
            time_unit="seconds",
        ),
        name="brachistochrone",
        control_law=_brachistochrone_control,
    )


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def problem_to_dict(p: OCProblem) -> dict:
    return {
        "name": p.name,
        "states": list(p.state_names),
        "controls": list(p.control_names),
        "endpoint_cost": ex.to_text(p.endpoint_cost),
        "running_cost": ex.to_text(p.running_cost),
        "dynamics": [ex.to_text(e) for e in p.dynamics],
        "events": {
            "exprs": [ex.to_text(e) for e in p.event_exprs],
            "lower": list(p.event_lower),
            "upper": list(p.event_upper),
        },
        "path": {
            "exprs": [ex.to_text(e) for e in p.path_exprs],
            "lower": list(p.path_lower),
            "upper": list(p.path_upper),
        },
        "units": {
            "states": list(p.units.state_units),
            "controls": list(p.units.control_units),
            "cost": p.units.cost_unit,
            "time": p.units.time_unit,
        },
    }


def problem_from_dict(data: dict) -> OCProblem:
    try:
        states = tuple(str(s) for s in data["states"])
        controls = tuple(str(s) for s in data.get("controls", []))
        events = data.get("events", {"exprs": [], "lower": [], "upper": []})
        path = data.get("path", {"exprs": [], "lower": [], "upper": []})
        units = data.get("units", {})
        p = OCProblem(
            state_names=states,
            control_names=controls,
            endpoint_cost=ex.parse(str(data["endpoint_cost"])),
            running_cost=ex.parse(str(data.get("running_cost", "0"))),
            dynamics=tuple(ex.parse(str(s)) for s in data["dynamics"]),
            event_exprs=tuple(ex.parse(str(s)) for s in events.get("exprs", [])),
            event_lower=tuple(float(v) for v in events.get("lower", [])),
            event_upper=tuple(float(v) for v in events.get("upper", [])),
            path_exprs=tuple(ex.parse(str(s)) for s in path.get("exprs", [])),
            path_lower=tuple(float(v) for v in path.get("lower", [])),
            path_upper=tuple(float(v) for v in path.get("upper", [])),
            units=UnitSystem(
                state_units=tuple(units.get("states", [""] * len(states))),
                control_units=tuple(units.get("controls", [""] * len(controls))),
                cost_unit=str(units.get("cost", "")),
                time_unit=str(units.get("time", "")),
            ),
            name=str(data.get("name", "")),
        )
    except ProblemError:
        raise
    except ex.ParseError as err:
        raise ProblemError(f"bad expression in problem file: {err}") from err
    except (KeyError, TypeError, ValueError) as err:
        raise ProblemError(f"bad problem file: {err}") from err
    validate(p)
    return p


def save_problem(p: OCProblem, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(problem_to_dict(p), fh, indent=2)
        fh.write("\n")


def load_problem(path: str) -> OCProblem:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ProblemError(f"bad problem file: {err}") from err
    return problem_from_dict(data)


# ---------------------------------------------------------------------------
# Sampled solutions
# ---------------------------------------------------------------------------


def _frozen_array(a, shape_hint=None) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    if shape_hint is not None and out.size == 0:
        out = out.reshape(shape_hint)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Trajectory:
    """States and controls sampled on a strictly increasing time grid."""

    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    label: str

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen_array(self.t))
        n = self.t.shape[0]
        object.__setattr__(self, "states", _frozen_array(self.states))
        object.__setattr__(self, "controls", _frozen_array(self.controls, (n, 0)))
        if self.label not in LABELS:
            raise ProblemError(f"bad trajectory label {self.label!r}")
        if self.t.ndim != 1 or n < 2:
            raise ProblemError("time grid must be 1-d with at least two samples")
        if not np.all(np.diff(self.t) > 0):
            raise ProblemError("time grid must be strictly increasing")
        if self.states.shape[0] != n or self.controls.shape[0] != n:
            raise ProblemError("sample counts do not match the time grid")


@dataclass(frozen=True)
class DualTrajectory:
    """Costates, multipliers, and Hamiltonian samples on the same grid."""

    costates: np.ndarray
    path_multipliers: np.ndarray
    event_multipliers: np.ndarray
    hamiltonian: np.ndarray
    label: str

    def __post_init__(self):
        n = np.shape(self.costates)[0]
        object.__setattr__(self, "costates", _frozen_array(self.costates))
        object.__setattr__(
            self, "path_multipliers", _frozen_array(self.path_multipliers, (n, 0))
        )
        object.__setattr__(
            self, "event_multipliers", _frozen_array(self.event_multipliers)
        )
        object.__setattr__(self, "hamiltonian", _frozen_array(self.hamiltonian))
        if self.label not in LABELS:
            raise ProblemError(f"bad dual label {self.label!r}")
        if self.hamiltonian.shape != (n,):
            raise ProblemError("Hamiltonian samples do not match costate samples")
        if self.path_multipliers.shape[0] != n:
            raise ProblemError("path multiplier samples do not match costates")


# ---------------------------------------------------------------------------
# Delimited output (17 significant digits, deterministic)
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_trajectory(tr: Trajectory, p: OCProblem, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *p.state_names, *p.control_names])
        for k in range(tr.t.shape[0]):
            writer.writerow(
                [_fmt(tr.t[k])]
                + [_fmt(v) for v in tr.states[k]]
                + [_fmt(v) for v in tr.controls[k]]
            )


def load_trajectory(path: str, p: OCProblem, label: str = "unscaled") -> Trajectory:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    expected = ["t", *p.state_names, *p.control_names]
    if not rows or rows[0] != expected:
        raise ProblemError(f"trajectory header mismatch: expected {expected}")
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    return Trajectory(
        t=data[:, 0],
        states=data[:, 1 : 1 + p.nx],
        controls=data[:, 1 + p.nx :],
        label=label,
    )


def save_dual(d: DualTrajectory, t: np.ndarray, path: str) -> None:
    nx = d.costates.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *[f"lam_{i + 1}" for i in range(nx)], "H"])
        for k in range(d.costates.shape[0]):
            writer.writerow(
                [_fmt(t[k])]
                + [_fmt(v) for v in d.costates[k]]
                + [_fmt(d.hamiltonian[k])]
            )


def load_dual(
    path: str,
    p: OCProblem,
    event_multipliers: Sequence[float] | None = None,
    label: str = "unscaled",
) -> DualTrajectory:
    """Read a costate/Hamiltonian table; path multipliers load as zeros.

    The delimited dual format carries lam_1..lam_nx and H only; event
    multipliers live in their own JSON sidecar and arrive through
    `event_multipliers`.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    expected = ["t", *[f"lam_{i + 1}" for i in range(p.nx)], "H"]
    if not rows or rows[0] != expected:
        raise ProblemError(f"dual header mismatch: expected {expected}")
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    n = data.shape[0]
    nu_vec = (
        np.zeros(p.ne) if event_multipliers is None else np.asarray(event_multipliers)
    )
    return DualTrajectory(
        costates=data[:, 1 : 1 + p.nx],
        path_multipliers=np.zeros((n, p.nh)),
        event_multipliers=nu_vec,
        hamiltonian=data[:, 1 + p.nx],
        label=label,
    )


def save_event_multipliers(nu: np.ndarray, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"nu": [float(v) for v in nu]}, fh, indent=2)
        fh.write("\n")


def load_event_multipliers(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return np.asarray([float(v) for v in data["nu"]])
