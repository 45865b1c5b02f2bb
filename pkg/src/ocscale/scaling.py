"""Affine scaling of problems and the induced covector scales.

A scale set assigns every primal quantity an affine change of units,
z = P z~ + q with positive diagonal P.  Applying it to a problem is a
symbolic substitution on the expression trees followed by constant
folding; nothing is ever rescaled on sampled arrays except through the
explicit descale/rescale helpers.  The covector scales are induced, not
chosen: lam = (pJ/Px) lam~, mu = (pJ/pt)/Ph mu~, nu = (pJ/Pe) nu~, and
the Hamiltonian descales by pJ/pt.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from importlib import resources
from typing import Callable, Mapping

import numpy as np

from . import expr as ex
from .problem import DualTrajectory, OCProblem, Trajectory

__all__ = [
    "ScaleError",
    "ScaleSet",
    "CovectorScales",
    "CovectorUnitsReport",
    "identity_scales",
    "covector_scales",
    "scale_problem",
    "scale_endpoint_bounds",
    "rescale_primal",
    "descale_primal",
    "rescale_dual",
    "descale_dual",
    "covector_units",
    "scale_set_to_dict",
    "scale_set_from_dict",
    "save_scale_set",
    "load_scale_set",
    "builtin_scale_set",
    "BUILTIN_SCALE_SETS",
]


class ScaleError(ValueError):
    """Invalid scale data or a scale/problem dimension mismatch."""


def _positive(name: str, values) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    for v in out:
        if not (math.isfinite(v) and v > 0.0):
            raise ScaleError(f"{name} entries must be positive and finite")
    return out


def _finite(name: str, values) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    for v in out:
        if not math.isfinite(v):
            raise ScaleError(f"{name} entries must be finite")
    return out


@dataclass(frozen=True, slots=True)
class ScaleSet:
    """Positive diagonal scales and offsets for every primal quantity."""

    Px: tuple[float, ...]
    qx: tuple[float, ...]
    Pu: tuple[float, ...]
    qu: tuple[float, ...]
    pt: float
    qt: float
    pJ: float
    qJ: float
    Pe: tuple[float, ...]
    qe: tuple[float, ...]
    Ph: tuple[float, ...]
    qh: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "Px", _positive("Px", self.Px))
        object.__setattr__(self, "Pu", _positive("Pu", self.Pu))
        object.__setattr__(self, "Pe", _positive("Pe", self.Pe))
        object.__setattr__(self, "Ph", _positive("Ph", self.Ph))
        object.__setattr__(self, "qx", _finite("qx", self.qx))
        object.__setattr__(self, "qu", _finite("qu", self.qu))
        object.__setattr__(self, "qe", _finite("qe", self.qe))
        object.__setattr__(self, "qh", _finite("qh", self.qh))
        for name in ("pt", "pJ"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0.0):
                raise ScaleError(f"{name} must be positive and finite")
            object.__setattr__(self, name, v)
        for name in ("qt", "qJ"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ScaleError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if len(self.qx) != len(self.Px) or len(self.qu) != len(self.Pu):
            raise ScaleError("offset lengths do not match scale lengths")
        if len(self.qe) != len(self.Pe) or len(self.qh) != len(self.Ph):
            raise ScaleError("offset lengths do not match scale lengths")

    def is_identity(self) -> bool:
        ones = all(
            v == 1.0 for v in (*self.Px, *self.Pu, *self.Pe, *self.Ph, self.pt, self.pJ)
        )
        zeros = all(
            v == 0.0 for v in (*self.qx, *self.qu, *self.qe, *self.qh, self.qt, self.qJ)
        )
        return ones and zeros


def identity_scales(p: OCProblem) -> ScaleSet:
    return ScaleSet(
        Px=(1.0,) * p.nx,
        qx=(0.0,) * p.nx,
        Pu=(1.0,) * p.nu,
        qu=(0.0,) * p.nu,
        pt=1.0,
        qt=0.0,
        pJ=1.0,
        qJ=0.0,
        Pe=(1.0,) * p.ne,
        qe=(0.0,) * p.ne,
        Ph=(1.0,) * p.nh,
        qh=(0.0,) * p.nh,
    )


def check_dimensions(p: OCProblem, s: ScaleSet) -> None:
    for name, got, want in (
        ("Px", len(s.Px), p.nx),
        ("Pu", len(s.Pu), p.nu),
        ("Pe", len(s.Pe), p.ne),
        ("Ph", len(s.Ph), p.nh),
    ):
        if got != want:
            raise ScaleError(f"{name} has {got} entries, problem needs {want}")


@dataclass(frozen=True, slots=True)
class CovectorScales:
    """Descale factors induced on the dual variables by a ScaleSet."""

    Plam: tuple[float, ...]
    Pmu: tuple[float, ...]
    Pnu: tuple[float, ...]
    hamiltonian: float


def covector_scales(s: ScaleSet) -> CovectorScales:
    """lam = Plam lam~, mu = Pmu mu~, nu = Pnu nu~, H = (pJ/pt) H~."""
    return CovectorScales(
        Plam=tuple(s.pJ / px for px in s.Px),
        Pmu=tuple((s.pJ / s.pt) / ph for ph in s.Ph),
        Pnu=tuple(s.pJ / pe for pe in s.Pe),
        hamiltonian=s.pJ / s.pt,
    )


# ---------------------------------------------------------------------------
# Symbolic application to a problem
# ---------------------------------------------------------------------------


def _affine_var(name: str, p: float, q: float) -> ex.Expr:
    # builds p*name + q without identity clutter
    return ex.add(ex.mul(ex.const(p), ex.var(name)), ex.const(q))


def _shift_and_divide(e: ex.Expr, q: float, p: float) -> ex.Expr:
    return ex.fold_constants(ex.div(ex.sub(e, ex.const(q)), ex.const(p)))


def _scale_factor(e: ex.Expr, c: float) -> ex.Expr:
    return ex.fold_constants(ex.mul(ex.const(c), e))


def _stage_substitution(p: OCProblem, s: ScaleSet) -> dict[str, ex.Expr]:
    sub: dict[str, ex.Expr] = {}
    for name, pv, qv in zip(p.state_names, s.Px, s.qx):
        sub[name] = _affine_var(name, pv, qv)
    for name, pv, qv in zip(p.control_names, s.Pu, s.qu):
        sub[name] = _affine_var(name, pv, qv)
    sub["t"] = _affine_var("t", s.pt, s.qt)
    return sub


def _endpoint_substitution(p: OCProblem, s: ScaleSet) -> dict[str, ex.Expr]:
    sub: dict[str, ex.Expr] = {}
    for name, pv, qv in zip(p.state_names, s.Px, s.qx):
        sub[f"x0_{name}"] = _affine_var(f"x0_{name}", pv, qv)
        sub[f"xf_{name}"] = _affine_var(f"xf_{name}", pv, qv)
    sub["t0"] = _affine_var("t0", s.pt, s.qt)
    sub["tf"] = _affine_var("tf", s.pt, s.qt)
    return sub


def _scaled_unit(label: str, p: float, q: float) -> str:
    if p == 1.0 and q == 0.0:
        return label
    ps = f"{p:g}"
    return f"{ps}*{label}" if q == 0.0 else f"{ps}*{label}+{q:g}"


def _wrap_control_law(law: Callable, p: OCProblem, s: ScaleSet) -> Callable:
    cs = covector_scales(s)
    plam = np.asarray(cs.Plam)
    px = np.asarray(s.Px)
    qx = np.asarray(s.qx)
    pu = np.asarray(s.Pu)
    qu = np.asarray(s.qu)

    def scaled_law(lam_t: np.ndarray, x_t: np.ndarray, t_t: float) -> np.ndarray:
        # pJ/pt > 0, so the scaled Hamiltonian is minimized exactly where
        # the unscaled one is; map the query out, minimize, map back
        u = law(plam * lam_t, px * x_t + qx, s.pt * t_t + s.qt)
        return (np.asarray(u) - qu) / pu

    return scaled_law


def scale_problem(p: OCProblem, s: ScaleSet) -> OCProblem:
    """Re-express `p` in the units of `s` by symbolic substitution.

    Every data function is rewritten with x = Px x~ + qx (and likewise u,
    t, endpoint variables), then wrapped with its own factor: running
    cost by pt/pJ, endpoint cost shifted by qJ and divided by pJ,
    dynamics row i by pt/Px_i, event and path rows shifted and divided by
    their Pe/Ph entries, with bounds mapped the same way.  Only constant
    folding is applied afterward, so coefficients like a scaled gravity
    term are reproducible to the last bit.
    """
    check_dimensions(p, s)
    stage = _stage_substitution(p, s)
    endpoint = _endpoint_substitution(p, s)

    running = _scale_factor(ex.substitute(p.running_cost, stage), s.pt / s.pJ)
    endpoint_cost = _shift_and_divide(
        ex.substitute(p.endpoint_cost, endpoint), s.qJ, s.pJ
    )
    dynamics = tuple(
        _scale_factor(ex.substitute(f, stage), s.pt / px)
        for f, px in zip(p.dynamics, s.Px)
    )
    events = tuple(
        _shift_and_divide(ex.substitute(g, endpoint), qv, pv)
        for g, pv, qv in zip(p.event_exprs, s.Pe, s.qe)
    )
    paths = tuple(
        _shift_and_divide(ex.substitute(h, stage), qv, pv)
        for h, pv, qv in zip(p.path_exprs, s.Ph, s.qh)
    )
    units = replace(
        p.units,
        state_units=tuple(
            _scaled_unit(u, pv, qv) for u, pv, qv in zip(p.units.state_units, s.Px, s.qx)
        ),
        control_units=tuple(
            _scaled_unit(u, pv, qv)
            for u, pv, qv in zip(p.units.control_units, s.Pu, s.qu)
        ),
        cost_unit=_scaled_unit(p.units.cost_unit, s.pJ, s.qJ),
        time_unit=_scaled_unit(p.units.time_unit, s.pt, s.qt),
    )
    return replace(
        p,
        endpoint_cost=endpoint_cost,
        running_cost=running,
        dynamics=dynamics,
        event_exprs=events,
        event_lower=tuple(
            (lo - qv) / pv for lo, pv, qv in zip(p.event_lower, s.Pe, s.qe)
        ),
        event_upper=tuple(
            (hi - qv) / pv for hi, pv, qv in zip(p.event_upper, s.Pe, s.qe)
        ),
        path_exprs=paths,
        path_lower=tuple(
            (lo - qv) / pv for lo, pv, qv in zip(p.path_lower, s.Ph, s.qh)
        ),
        path_upper=tuple(
            (hi - qv) / pv for hi, pv, qv in zip(p.path_upper, s.Ph, s.qh)
        ),
        units=units,
        control_law=(
            None
            if p.control_law is None
            else _wrap_control_law(p.control_law, p, s)
        ),
    )


def scale_endpoint_bounds(
    p: OCProblem, s: ScaleSet
) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """The event bounds in scale-set units, returned for reporting."""
    check_dimensions(p, s)
    lo = tuple((v - qv) / pv for v, pv, qv in zip(p.event_lower, s.Pe, s.qe))
    hi = tuple((v - qv) / pv for v, pv, qv in zip(p.event_upper, s.Pe, s.qe))
    return lo, hi


# ---------------------------------------------------------------------------
# Sample-space maps (no symbolic work; direct affine arithmetic)
# ---------------------------------------------------------------------------


def _require_label(label: str, allowed: tuple[str, ...], what: str) -> None:
    if label not in allowed:
        raise ScaleError(f"{what} expects a trajectory labeled {allowed}, got {label!r}")


def rescale_primal(tr: Trajectory, s: ScaleSet) -> Trajectory:
    """Map original-unit samples into scale-set units (z~ = (z - q)/P)."""
    _require_label(tr.label, ("unscaled", "descaled"), "rescale_primal")
    return Trajectory(
        t=(tr.t - s.qt) / s.pt,
        states=(tr.states - np.asarray(s.qx)) / np.asarray(s.Px),
        controls=(tr.controls - np.asarray(s.qu)) / np.asarray(s.Pu)
        if tr.controls.size
        else tr.controls,
        label="scaled",
    )


def descale_primal(tr: Trajectory, s: ScaleSet) -> Trajectory:
    """Map scale-set samples back to original units (z = P z~ + q)."""
    _require_label(tr.label, ("scaled",), "descale_primal")
    return Trajectory(
        t=s.pt * tr.t + s.qt,
        states=np.asarray(s.Px) * tr.states + np.asarray(s.qx),
        controls=np.asarray(s.Pu) * tr.controls + np.asarray(s.qu)
        if tr.controls.size
        else tr.controls,
        label="descaled",
    )


def rescale_dual(d: DualTrajectory, s: ScaleSet) -> DualTrajectory:
    """Inverse of descale_dual: divide by the induced covector scales."""
    _require_label(d.label, ("unscaled", "descaled"), "rescale_dual")
    cs = covector_scales(s)
    return DualTrajectory(
        costates=d.costates / np.asarray(cs.Plam),
        path_multipliers=d.path_multipliers / np.asarray(cs.Pmu)
        if d.path_multipliers.size
        else d.path_multipliers,
        event_multipliers=d.event_multipliers / np.asarray(cs.Pnu)
        if d.event_multipliers.size
        else d.event_multipliers,
        hamiltonian=d.hamiltonian / cs.hamiltonian,
        label="scaled",
    )


def descale_dual(d: DualTrajectory, s: ScaleSet) -> DualTrajectory:
    """Multiply scaled duals by the induced covector scales.

    This is the whole point of the covector scale result: the dual
    variables of the scaled problem descale through fixed diagonal
    factors, with no re-solve and no knowledge of the solution.
    """
    _require_label(d.label, ("scaled",), "descale_dual")
    cs = covector_scales(s)
    return DualTrajectory(
        costates=d.costates * np.asarray(cs.Plam),
        path_multipliers=d.path_multipliers * np.asarray(cs.Pmu)
        if d.path_multipliers.size
        else d.path_multipliers,
        event_multipliers=d.event_multipliers * np.asarray(cs.Pnu)
        if d.event_multipliers.size
        else d.event_multipliers,
        hamiltonian=d.hamiltonian * cs.hamiltonian,
        label="descaled",
    )


# ---------------------------------------------------------------------------
# Units of the dual variables
# ---------------------------------------------------------------------------

_UNIT_TOKEN_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_-]*$")


def _parse_unit(label: str) -> dict[str, int] | None:
    """Parse 'a*b^2/c' into exponents; None when the label is not of
    that shape (free-form labels are allowed everywhere else)."""
    label = label.strip()
    if not label:
        return None
    out: dict[str, int] = {}
    sign = 1
    for piece in re.split(r"([*/])", label):
        piece = piece.strip()
        if piece == "*":
            continue
        if piece == "/":
            sign = -1
            continue
        name, _, power = piece.partition("^")
        name = name.strip()
        if not _UNIT_TOKEN_RE.match(name):
            return None
        try:
            exp = int(power) if power else 1
        except ValueError:
            return None
        out[name] = out.get(name, 0) + sign * exp
        if out[name] == 0:
            del out[name]
    return out


def _format_unit(d: Mapping[str, int]) -> str:
    num = [(k, v) for k, v in sorted(d.items()) if v > 0]
    den = [(k, -v) for k, v in sorted(d.items()) if v < 0]

    def side(parts):
        return "*".join(k if v == 1 else f"{k}^{v}" for k, v in parts)

    if not num and not den:
        return "1"
    if not den:
        return side(num)
    den_text = side(den)
    if len(den) > 1:
        den_text = f"({den_text})"
    return f"{side(num) or '1'}/{den_text}"


def _ratio_unit(top: str, bottom: str) -> str:
    """top/bottom, simplified when both labels parse and share tokens."""
    a, b = _parse_unit(top), _parse_unit(bottom)
    if a is not None and b is not None and (set(a) & set(b)):
        return _format_unit({k: a.get(k, 0) - b.get(k, 0) for k in set(a) | set(b)})
    bt = bottom if _is_simple_token(bottom) else f"({bottom})"
    return f"{top}/{bt}" if _is_simple_token(top) else f"({top})/{bt}"


def _is_simple_token(label: str) -> bool:
    return bool(_UNIT_TOKEN_RE.match(label.strip()))


@dataclass(frozen=True, slots=True)
class CovectorUnitsReport:
    costate_units: tuple[str, ...]
    path_multiplier_units: tuple[str, ...]
    event_multiplier_units: tuple[str, ...]
    hamiltonian_unit: str
    hamiltonian_dimensionless: bool
    factors: CovectorScales | None = None


def covector_units(p: OCProblem, s: ScaleSet | None = None) -> CovectorUnitsReport:
    """Units carried by the duals, from the problem's unit labels.

    Costate i carries cost-units per x_i-units, path multiplier k carries
    cost-units per time per h_k-units, and an event multiplier carries
    cost-units per event-units.  Event rows that pin a single endpoint
    variable inherit that variable's unit; other rows are reported with
    the row text in place of a unit.  The Hamiltonian carries cost-units
    per time-units and is flagged dimensionless when the two labels agree.
    With a scale set the report also carries the numeric descale factors,
    pairing each scaled dual with the factor and unit that recover it.
    """
    factors = None
    if s is not None:
        check_dimensions(p, s)
        factors = covector_scales(s)
    cu = p.units.cost_unit
    tu = p.units.time_unit
    lam = tuple(_ratio_unit(cu, u) for u in p.units.state_units)
    rate = _ratio_unit(cu, tu)
    stage_units = dict(zip(p.state_names, p.units.state_units))
    stage_units.update(zip(p.control_names, p.units.control_units))
    mu = []
    for h in p.path_exprs:
        # constraint rows carry no declared unit label of their own; a row
        # that is a bare variable inherits that variable's unit
        if h.op == "var" and h.name in stage_units:
            mu.append(_ratio_unit(rate, stage_units[h.name]))
        else:
            mu.append(f"({rate})/({ex.to_text(h)} units)")
    nu = []
    by_name = dict(zip(p.state_names, p.units.state_units))
    for g in p.event_exprs:
        if g.op == "var":
            if g.name in ("t0", "tf"):
                nu.append(_ratio_unit(cu, tu))
                continue
            base = g.name.partition("_")[2]
            if base in by_name:
                nu.append(_ratio_unit(cu, by_name[base]))
                continue
        nu.append(f"{cu}/({ex.to_text(g)} units)")
    a, b = _parse_unit(cu), _parse_unit(tu)
    dimensionless = a is not None and a == b
    return CovectorUnitsReport(
        costate_units=lam,
        path_multiplier_units=tuple(mu),
        event_multiplier_units=tuple(nu),
        hamiltonian_unit=rate,
        hamiltonian_dimensionless=dimensionless,
        factors=factors,
    )


# ---------------------------------------------------------------------------
# Serialization and shipped scale sets
# ---------------------------------------------------------------------------


def scale_set_to_dict(s: ScaleSet) -> dict:
    return {
        "Px": list(s.Px),
        "qx": list(s.qx),
        "Pu": list(s.Pu),
        "qu": list(s.qu),
        "pt": s.pt,
        "qt": s.qt,
        "pJ": s.pJ,
        "qJ": s.qJ,
        "Pe": list(s.Pe),
        "qe": list(s.qe),
        "Ph": list(s.Ph),
        "qh": list(s.qh),
    }


def _broadcast(data: dict, key: str, n: int, default: float) -> tuple[float, ...]:
    if key not in data:
        return (default,) * n
    value = data[key]
    if isinstance(value, (int, float)):
        return (float(value),) * n
    out = tuple(float(v) for v in value)
    if len(out) != n:
        raise ScaleError(f"{key} has {len(out)} entries, problem needs {n}")
    return out


def scale_set_from_dict(data: dict, p: OCProblem) -> ScaleSet:
    """Build a ScaleSet for `p`; omitted P entries default to 1, q to 0,
    and scalars broadcast across the matching dimension."""
    try:
        return ScaleSet(
            Px=_broadcast(data, "Px", p.nx, 1.0),
            qx=_broadcast(data, "qx", p.nx, 0.0),
            Pu=_broadcast(data, "Pu", p.nu, 1.0),
            qu=_broadcast(data, "qu", p.nu, 0.0),
            pt=float(data.get("pt", 1.0)),
            qt=float(data.get("qt", 0.0)),
            pJ=float(data.get("pJ", 1.0)),
            qJ=float(data.get("qJ", 0.0)),
            Pe=_broadcast(data, "Pe", p.ne, 1.0),
            qe=_broadcast(data, "qe", p.ne, 0.0),
            Ph=_broadcast(data, "Ph", p.nh, 1.0),
            qh=_broadcast(data, "qh", p.nh, 0.0),
        )
    except ScaleError:
        raise
    except (TypeError, ValueError) as err:
        raise ScaleError(f"bad scale file: {err}") from err


def save_scale_set(s: ScaleSet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scale_set_to_dict(s), fh, indent=2)
        fh.write("\n")


def load_scale_set(path: str, p: OCProblem) -> ScaleSet:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ScaleError(f"bad scale file: {err}") from err
    if not isinstance(data, dict):
        raise ScaleError("scale file must hold a JSON object")
    return scale_set_from_dict(data, p)


BUILTIN_SCALE_SETS = ("set1", "set2", "set3", "zpm")


def builtin_scale_set(name: str, p: OCProblem) -> ScaleSet:
    """Load one of the shipped scale files (set1, set2, set3, zpm)."""
    if name not in BUILTIN_SCALE_SETS:
        raise ScaleError(f"unknown builtin scale set {name!r}")
    text = (
        resources.files("ocscale.data").joinpath(f"scales/{name}.json").read_text()
    )
    return scale_set_from_dict(json.loads(text), p)
