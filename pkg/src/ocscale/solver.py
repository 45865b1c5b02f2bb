"""Indirect shooting: adaptive Runge-Kutta propagation plus damped Newton.

The state-costate system is integrated with an embedded Dormand-Prince
5(4) pair with quartic dense output; the control at every right-hand-side
evaluation comes from pointwise Hamiltonian minimization, never from
stored samples.  The boundary problem is reduced to a square root-finding
system over the free initial costates (and the final time when free) and
handed to a damped Newton iteration with a forward-difference Jacobian.

The reduction handles the structured endpoint class: t0 pinned, every
initial state pinned, each final state pinned or free, final time pinned
or free, where a pin is an event row affine in a single endpoint variable
with equal bounds.  Anything else solves nowhere here but still verifies
through `conditions`.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from . import conditions as cn
from . import expr as ex
from .problem import DualTrajectory, OCProblem, Trajectory
from .scaling import ScaleSet, covector_scales, scale_problem

__all__ = [
    "SolverError",
    "ReductionError",
    "IntegratorOptions",
    "DenseSolution",
    "rk45_propagate",
    "NewtonOptions",
    "NewtonResult",
    "newton_solve",
    "ShootingSpec",
    "build_shooting_spec",
    "shooting_map",
    "SolveResult",
    "solve_bvp",
    "solve_bvp_full",
    "propagate_with_control",
]


class SolverError(RuntimeError):
    """Numerical failure; `unknowns` carries the offending vector if any."""

    def __init__(self, message: str, unknowns: np.ndarray | None = None):
        super().__init__(message)
        self.unknowns = unknowns


class ReductionError(SolverError):
    """Event structure outside the shooting-reducible class."""


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)
# ---------------------------------------------------------------------------

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# difference between the 5th- and embedded 4th-order weights, K7 included
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# quartic interpolant coefficients (rows pair with K1..K7)
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)


@dataclass(frozen=True, slots=True)
class IntegratorOptions:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_steps: int = 10**6
    dense_stride: int = 1

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise SolverError("integrator tolerances must be positive")
        if self.max_steps < 1 or self.dense_stride < 1:
            raise SolverError("max_steps and dense_stride must be at least 1")


class DenseSolution:
    """Piecewise-quartic interpolant collected over the accepted steps.

    Every step stores its endpoints and slopes; the interpolating
    polynomial is kept for each `dense_stride`-th step, with a cubic
    Hermite fallback inside dropped steps (only relevant when a caller
    thins storage on very long integrations).
    """

    def __init__(self, t0: float, y0: np.ndarray):
        self.t_start = t0
        self.t_end = t0
        self.y_end = y0.copy()
        self.n_steps = 0
        self._lefts: list[float] = []
        self._segments: list[tuple] = []  # (t0, h, y0, y1, f0, f1, Q or None)

    def _append(self, t_old, h, y_old, y_new, f_old, f_new, Q):
        self._lefts.append(t_old)
        self._segments.append((t_old, h, y_old, y_new, f_old, f_new, Q))
        self.t_end = t_old + h
        self.y_end = y_new
        self.n_steps += 1

    def sample(self, times) -> np.ndarray:
        """Values at the requested times (must lie inside the span)."""
        ts = np.atleast_1d(np.asarray(times, dtype=float))
        lo, hi = self.t_start, self.t_end
        span = hi - lo
        out = np.empty((ts.shape[0], self.y_end.shape[0]))
        for i, t in enumerate(ts):
            if t < lo - 1e-12 * span or t > hi + 1e-12 * span:
                raise SolverError(f"sample time {t} outside [{lo}, {hi}]")
            t = min(max(t, lo), hi)
            k = bisect.bisect_right(self._lefts, t) - 1
            k = min(max(k, 0), len(self._segments) - 1)
            t0, h, y0, y1, f0, f1, Q = self._segments[k]
            s = (t - t0) / h
            if Q is not None:
                powers = np.array([s, s * s, s**3, s**4])
                out[i] = y0 + h * (Q @ powers)
            else:
                # cubic Hermite through the step endpoints
                h00 = (1 + 2 * s) * (1 - s) ** 2
                h10 = s * (1 - s) ** 2
                h01 = s * s * (3 - 2 * s)
                h11 = s * s * (s - 1)
                out[i] = h00 * y0 + h * h10 * f0 + h01 * y1 + h * h11 * f1
        if np.ndim(times) == 0:
            return out[0]
        return out


def _error_norm(err: np.ndarray, scale: np.ndarray) -> float:
    return float(np.max(np.abs(err) / scale))


def _initial_step(rhs, t0, y0, f0, tf, rel_tol, abs_tol):
    scale = abs_tol + rel_tol * np.abs(y0)
    d0 = math.sqrt(float(np.mean((y0 / scale) ** 2)))
    d1 = math.sqrt(float(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = np.asarray(rhs(t0 + h0, y1), dtype=float)
    if not np.all(np.isfinite(f1)):
        return min(1e-6 * (tf - t0), tf - t0)
    d2 = math.sqrt(float(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, tf - t0)


def rk45_propagate(rhs, y0, t0: float, tf: float, opts: IntegratorOptions = IntegratorOptions()) -> DenseSolution:
    """Integrate dy/dt = rhs(t, y) from t0 to tf with local error control.

    Each step is accepted when the embedded error estimate satisfies
    |err_i| <= abs_tol + rel_tol*max(|y_i|, |y_new_i|) componentwise.
    """
    if not tf > t0:
        raise SolverError(f"propagation needs tf > t0, got [{t0}, {tf}]")
    y = np.asarray(y0, dtype=float).copy()
    if y.ndim != 1:
        raise SolverError("y0 must be a vector")
    sol = DenseSolution(t0, y)
    t = t0
    k1 = np.asarray(rhs(t, y), dtype=float)
    if not np.all(np.isfinite(k1)):
        raise SolverError(f"NaN in rhs at t={t}")
    h = _initial_step(rhs, t0, y, k1, tf, opts.rel_tol, opts.abs_tol)
    K = np.empty((7, y.shape[0]))
    steps = 0
    accepted = 0
    while tf - t > 4e-16 * max(1.0, abs(tf)):
        if steps >= opts.max_steps:
            raise SolverError(f"max_steps={opts.max_steps} exceeded at t={t}")
        steps += 1
        h = min(h, tf - t)
        K[0] = k1
        bad = False
        for i in range(5):
            yi = y + h * (K[: i + 1].T @ _A[i])
            K[i + 1] = rhs(t + _C[i + 1] * h, yi)
            if not np.all(np.isfinite(K[i + 1])):
                bad = True
                break
        if not bad:
            y_new = y + h * (K[:6].T @ _B)
            K[6] = rhs(t + h, y_new)
            bad = not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(K[6])))
        if bad:
            h *= 0.25
            if h <= 1e-15 * max(1.0, abs(t)):
                raise SolverError(f"NaN in rhs at t={t}")
            continue
        err = h * (K.T @ _E)
        scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        norm = _error_norm(err, scale)
        if norm <= 1.0:
            keep_poly = accepted % opts.dense_stride == 0
            Q = K.T @ _P if keep_poly else None
            sol._append(t, h, y.copy(), y_new.copy(), K[0].copy(), K[6].copy(), Q)
            t += h
            y = y_new
            k1 = K[6].copy()  # first-same-as-last
            accepted += 1
            factor = 0.9 * (norm ** -0.2) if norm > 0 else 10.0
            h *= min(10.0, max(0.2, factor))
        else:
            h *= max(0.2, 0.9 * (norm ** -0.2))
            if h <= 1e-15 * max(1.0, abs(t)):
                raise SolverError(f"step size underflow at t={t}")
    if sol.n_steps == 0:
        raise SolverError("no steps taken")  # pragma: no cover - span check above
    sol.t_end = tf  # snap away the closing-step roundoff sliver
    return sol


# ---------------------------------------------------------------------------
# Newton with line search
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class NewtonOptions:
    residual_tol: float = 1e-9
    step_tol: float = 1e-14
    max_iter: int = 50
    fd_step: float = 1e-7
    max_halvings: int = 30
    cond_limit: float = 1e14
    # trust bound per component, |dz_i| <= max_step_scale*max(1,|z_i|);
    # generous on purpose so it only trims runaway trial points whose
    # residual evaluation would be needlessly expensive
    max_step_scale: float = 50.0


@dataclass(frozen=True)
class NewtonResult:
    z: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float
    message: str
    singular: bool = False


def _try_residual(fn, z):
    try:
        r = np.asarray(fn(z), dtype=float)
    except SolverError:
        return None
    if not np.all(np.isfinite(r)):
        return None
    return r


def newton_solve(residual_fn, guess, opts: NewtonOptions = NewtonOptions()) -> NewtonResult:
    """Damped Newton for square systems.

    Forward-difference Jacobian with per-component step 1e-7*max(1,|z_i|),
    Armijo backtracking on the squared residual norm (halving, at most 30
    times, trials that raise or go non-finite count as rejections).
    Convergence is declared at residual sup-norm <= 1e-9 or when the
    damped step shrinks below 1e-14.
    """
    z = np.asarray(guess, dtype=float).copy()
    r = _try_residual(residual_fn, z)
    if r is None:
        raise SolverError("residual evaluation failed at the initial guess", z)
    if r.shape != z.shape:
        raise SolverError(
            f"system is not square: {r.shape[0]} residuals, {z.shape[0]} unknowns", z
        )
    best_z, best_norm = z.copy(), float(np.max(np.abs(r)))
    n = z.shape[0]
    for it in range(1, opts.max_iter + 1):
        rnorm = float(np.max(np.abs(r)))
        if rnorm < best_norm:
            best_z, best_norm = z.copy(), rnorm
        if rnorm <= opts.residual_tol:
            return NewtonResult(z, True, it - 1, rnorm, "residual tolerance met")
        J = np.empty((n, n))
        for i in range(n):
            hstep = opts.fd_step * max(1.0, abs(z[i]))
            zp = z.copy()
            zp[i] += hstep
            rp = _try_residual(residual_fn, zp)
            if rp is None:
                zp[i] = z[i] - hstep
                rp = _try_residual(residual_fn, zp)
                if rp is None:
                    return NewtonResult(
                        best_z, False, it, best_norm,
                        f"Jacobian column {i} could not be evaluated", False,
                    )
                J[:, i] = (r - rp) / hstep
            else:
                J[:, i] = (rp - r) / hstep
        if np.linalg.cond(J) > opts.cond_limit:
            return NewtonResult(
                best_z, False, it, best_norm,
                f"Jacobian condition estimate exceeds {opts.cond_limit:g}", True,
            )
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return NewtonResult(best_z, False, it, best_norm, "singular Jacobian", True)
        cap = opts.max_step_scale * np.maximum(1.0, np.abs(z))
        step = np.clip(step, -cap, cap)
        phi = float(np.dot(r, r))
        # directional derivative of |r|^2 along the (possibly clamped) step
        slope = 2.0 * float(r @ (J @ step))
        if slope >= 0.0:  # clipping flipped the direction; demand real descent
            slope = -2.0 * phi
        alpha = 1.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            trial = z + alpha * step
            rt = _try_residual(residual_fn, trial)
            if rt is not None and float(np.dot(rt, rt)) <= phi + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return NewtonResult(
                best_z, False, it, best_norm, "line search stalled", False
            )
        z = trial
        r = rt
        rnorm = float(np.max(np.abs(r)))
        if rnorm < best_norm:
            best_z, best_norm = z.copy(), rnorm
        if float(np.max(np.abs(alpha * step))) <= opts.step_tol:
            return NewtonResult(z, True, it, rnorm, "step tolerance met")
    return NewtonResult(best_z, False, opts.max_iter, best_norm, "iteration cap reached")


# ---------------------------------------------------------------------------
# Shooting reduction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class _EventPin:
    row: int
    kind: str  # t0 | x0 | xf | tf
    state: int  # -1 for time pins
    slope: float
    offset: float
    target: float  # pinned row value (eL == eU)

    @property
    def variable_value(self) -> float:
        return (self.target - self.offset) / self.slope


@dataclass(frozen=True)
class ShootingSpec:
    """Square reduction of a problem's boundary structure.

    Unknowns are the full initial costate vector plus the final time when
    free; residual rows are the pinned final-state event rows, one
    transversality row per free final state, and the Hamiltonian value
    row when the final time is free.
    """

    t0: float
    x0: np.ndarray
    tf_fixed: float | None
    pins: tuple[_EventPin, ...]
    free_final_states: tuple[int, ...]
    guess: np.ndarray
    residual_names: tuple[str, ...]
    _row_fns: tuple = field(repr=False, default=())
    _dE: dict = field(repr=False, default_factory=dict)

    @property
    def tf_free(self) -> bool:
        return self.tf_fixed is None

    @property
    def n_unknowns(self) -> int:
        return self.guess.shape[0]


def _affine_row(g: ex.Expr, names: set[str]) -> tuple[str, float, float] | None:
    """(variable, slope, offset) when g is affine in exactly one endpoint
    variable, else None."""
    row_vars = ex.variables(g)
    if len(row_vars) != 1:
        return None
    (var,) = row_vars
    if var not in names:
        return None
    d = ex.fold_constants(ex.diff(g, var))
    if d.op != "const":
        return None
    slope = d.value
    if slope == 0.0 or not math.isfinite(slope):
        return None
    offset = ex.evaluate(g, {var: 0.0})
    return var, slope, offset


def build_shooting_spec(p: OCProblem, lam0_guess, tf_guess: float) -> ShootingSpec:
    """Classify the event rows and assemble the square unknown/residual map.

    Raises ReductionError when the problem sits outside the structured
    class (inequality event rows, a row coupling several endpoint
    variables, an unpinned initial state, or a doubly pinned variable).
    """
    endpoint_names = {"t0", "tf"} | {
        f"{pre}_{n}" for n in p.state_names for pre in ("x0", "xf")
    }
    pins: list[_EventPin] = []
    seen: dict[str, int] = {}
    for i, g in enumerate(p.event_exprs):
        if p.event_lower[i] != p.event_upper[i]:
            raise ReductionError(
                f"event row {i} has unequal bounds; only pinned rows reduce"
            )
        info = _affine_row(g, endpoint_names)
        if info is None:
            raise ReductionError(
                f"event row {i} ({ex.to_text(g)}) is not affine in a single "
                f"endpoint variable"
            )
        var, slope, offset = info
        if var in seen:
            raise ReductionError(f"{var} pinned by rows {seen[var]} and {i}")
        seen[var] = i
        if var == "t0":
            kind, state = "t0", -1
        elif var == "tf":
            kind, state = "tf", -1
        else:
            prefix, _, base = var.partition("_")
            kind = prefix
            state = p.state_names.index(base)
        pins.append(_EventPin(i, kind, state, slope, offset, p.event_lower[i]))

    by_kind = {k: [q for q in pins if q.kind == k] for k in ("t0", "x0", "xf", "tf")}
    if len(by_kind["t0"]) != 1:
        raise ReductionError("shooting needs exactly one event row pinning t0")
    t0 = by_kind["t0"][0].variable_value
    covered = {q.state for q in by_kind["x0"]}
    if covered != set(range(p.nx)):
        missing = sorted(set(range(p.nx)) - covered)
        raise ReductionError(
            f"initial states not fully pinned (missing {missing})"
        )
    x0 = np.empty(p.nx)
    for q in by_kind["x0"]:
        x0[q.state] = q.variable_value
    tf_fixed = by_kind["tf"][0].variable_value if by_kind["tf"] else None
    pinned_final = {q.state for q in by_kind["xf"]}
    free_final = tuple(j for j in range(p.nx) if j not in pinned_final)

    c = cn._tables(p)
    names = [f"event[{q.row}]" for q in by_kind["xf"]]
    names += [f"transversality[{p.state_names[j]}]" for j in free_final]
    guess = np.asarray(lam0_guess, dtype=float).copy()
    if guess.shape != (p.nx,):
        raise ReductionError(f"lam0 guess must have length {p.nx}")
    if tf_fixed is None:
        names.append("hamiltonian_value[tf]")
        guess = np.append(guess, float(tf_guess))
        if not guess[-1] > t0:
            raise ReductionError("tf guess must exceed t0")
    if len(names) != guess.shape[0]:  # pragma: no cover - structure forbids it
        raise ReductionError("unknown/residual count mismatch")
    return ShootingSpec(
        t0=t0,
        x0=x0,
        tf_fixed=tf_fixed,
        pins=tuple(pins),
        free_final_states=free_final,
        guess=guess,
        residual_names=tuple(names),
        _row_fns=tuple(c.e),
        _dE=c.dE,
    )


def _make_rhs(p: OCProblem):
    """Coupled state-costate right-hand side with pointwise control."""
    c = cn._tables(p)
    nx, nu = p.nx, p.nu
    law = p.control_law
    warm = [np.zeros(nu)]
    mu0 = np.zeros(p.nh)

    def control(lam, x, t):
        if nu == 0:
            return warm[0]
        if law is not None:
            u = np.asarray(law(lam, x, t), dtype=float)
        else:
            u = cn.minimize_hamiltonian(p, lam, mu0, x, t, warm[0])
        warm[0] = u
        return u

    def rhs(t, y):
        x = y[:nx]
        lam = y[nx:]
        u = control(lam, x, t)
        args = (*x, *u, t)
        out = np.empty(2 * nx)
        for i in range(nx):
            out[i] = c.f[i](*args)
        for i in range(nx):
            acc = c.Fx[i](*args)
            for j in range(nx):
                acc += lam[j] * c.fx[j][i](*args)
            out[nx + i] = -acc
        return out

    return rhs, control


def shooting_map(
    p: OCProblem,
    spec: ShootingSpec,
    unknowns,
    opts: IntegratorOptions = IntegratorOptions(),
    dense: bool = False,
):
    """Residual of the boundary conditions at one unknown vector.

    Integrates the coupled system from the pinned initial point and
    stacks: pinned final event rows minus their targets, transversality
    rows for free final states, and the Hamiltonian value row when the
    final time is free.  With dense=True also returns the dense solution
    and the control closure (used by solve_bvp after convergence).
    """
    z = np.asarray(unknowns, dtype=float)
    if z.shape != spec.guess.shape:
        raise SolverError(f"expected {spec.guess.shape[0]} unknowns, got {z.shape[0]}", z)
    nx = p.nx
    lam0 = z[:nx]
    tf = float(z[nx]) if spec.tf_free else float(spec.tf_fixed)
    if not tf > spec.t0:
        raise SolverError(f"tf={tf} does not exceed t0={spec.t0}", z)
    rhs, control = _make_rhs(p)
    y0 = np.concatenate([spec.x0, lam0])
    try:
        sol = rk45_propagate(rhs, y0, spec.t0, tf, opts)
    except (SolverError, cn.MinimizeError) as err:
        # a pointwise control minimization blowing up mid-integration is a
        # numeric failure of this trial point, same as a step-size collapse
        raise SolverError(f"propagation failed: {err}", z) from err
    xf = sol.y_end[:nx]
    lamf = sol.y_end[nx:]
    uf = control(lamf, xf, tf)
    eargs = (*spec.x0, *xf, spec.t0, tf)
    rows = []
    for q in spec.pins:
        if q.kind == "xf":
            rows.append(spec._row_fns[q.row](*eargs) - q.target)
    for j in spec.free_final_states:
        rows.append(lamf[j] - spec._dE[f"xf_{p.state_names[j]}"](*eargs))
    if spec.tf_free:
        H = cn.hamiltonian(p, lamf, xf, uf, tf)
        rows.append(H + spec._dE["tf"](*eargs))
    r = np.asarray(rows, dtype=float)
    if dense:
        return r, sol, control
    return r


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolveResult:
    trajectory: Trajectory
    dual: DualTrajectory
    newton: NewtonResult
    spec: ShootingSpec
    degenerate_control_points: int


def _latin_hypercube(center: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    d = center.shape[0]
    pts = np.empty((n, d))
    for j in range(d):
        strata = (rng.permutation(n) + rng.uniform(0, 1, n)) / n  # in (0,1)
        spread = 2.0 * strata - 1.0  # in (-1,1)
        base = center[j]
        width = 0.5 * abs(base) if base != 0.0 else 0.5
        pts[:, j] = base + width * spread
    return pts


def _recover_event_multipliers(p, spec, lam0, lamf, h0, hf, eargs) -> np.ndarray:
    """Each pinned row's multiplier from its own boundary condition.

    With every pinned variable covered by exactly one affine row, the
    matching transversality or value condition is linear in that row's
    multiplier and solves directly; free variables contribute no rows.
    """
    nu = np.zeros(p.ne)
    for q in spec.pins:
        if q.kind == "x0":
            rhs_val = -lam0[q.state] - spec._dE[f"x0_{p.state_names[q.state]}"](*eargs)
        elif q.kind == "xf":
            rhs_val = lamf[q.state] - spec._dE[f"xf_{p.state_names[q.state]}"](*eargs)
        elif q.kind == "t0":
            rhs_val = h0 - spec._dE["t0"](*eargs)
        else:  # tf pinned
            rhs_val = -hf - spec._dE["tf"](*eargs)
        nu[q.row] = rhs_val / q.slope
    return nu


def solve_bvp_full(
    p: OCProblem,
    s: ScaleSet | None,
    guess: dict,
    opts: IntegratorOptions = IntegratorOptions(),
    newton_opts: NewtonOptions = NewtonOptions(),
    grid_points: int = 1001,
    multistart: int = 0,
    seed: int | None = None,
) -> SolveResult:
    """Scale, shoot, and sample; the workhorse behind solve_bvp.

    The guess is always given in the problem's original units
    ({"lambda0": [...], "tf": t}); under a scale set it is mapped through
    the covector scales before shooting, and the returned objects carry
    the matching label ("scaled" vs "unscaled").
    """
    try:
        lam0 = np.asarray(guess["lambda0"], dtype=float)
        tf_guess = float(guess["tf"])
    except (KeyError, TypeError, ValueError) as err:
        raise SolverError(f"bad guess data: {err}") from err
    if s is not None and not s.is_identity():
        q = scale_problem(p, s)
        cs = covector_scales(s)
        lam0 = lam0 / np.asarray(cs.Plam)
        tf_guess = (tf_guess - s.qt) / s.pt
        label = "scaled"
    else:
        q = p
        label = "unscaled"
    spec = build_shooting_spec(q, lam0, tf_guess)

    def residual(z):
        return shooting_map(q, spec, z, opts)

    result = None
    try:
        result = newton_solve(residual, spec.guess, newton_opts)
    except SolverError:
        # an infeasible starting point is still rescuable by scattering
        if multistart <= 0:
            raise
    if (result is None or not result.converged) and multistart > 0:
        rng = np.random.default_rng(seed)
        for z0 in _latin_hypercube(spec.guess, multistart, rng):
            try:
                attempt = newton_solve(residual, z0, newton_opts)
            except SolverError:
                continue
            if attempt.converged:
                result = attempt
                break
            if result is None or attempt.residual_norm < result.residual_norm:
                result = attempt
    if result is None:
        raise SolverError(
            "no start produced an evaluable residual", spec.guess
        )
    if not result.converged:
        raise SolverError(
            f"shooting did not converge: {result.message} "
            f"(best residual {result.residual_norm:.3e})",
            result.z,
        )

    _, sol, control = shooting_map(q, spec, result.z, opts, dense=True)
    nx = q.nx
    tf = float(result.z[nx]) if spec.tf_free else float(spec.tf_fixed)
    tgrid = np.linspace(spec.t0, tf, grid_points)
    Y = sol.sample(tgrid)
    states = Y[:, :nx]
    costates = Y[:, nx:]
    controls = np.empty((grid_points, q.nu))
    H = np.empty(grid_points)
    degenerate = 0
    # warm hint for the first sample: the law value when one exists, else
    # the cold start every residual integration itself used at t0 (the
    # closure's warm state holds the control near tf here, which can put a
    # law-less Newton minimization in the wrong basin)
    if q.nu:
        if q.control_law is not None:
            first_hint = control(costates[0], states[0], spec.t0)
        else:
            first_hint = np.zeros(q.nu)
    for k in range(grid_points):
        if q.nu:
            u, info = cn.minimize_hamiltonian(
                q,
                costates[k],
                np.zeros(q.nh),
                states[k],
                float(tgrid[k]),
                controls[k - 1] if k else first_hint,
                full_output=True,
            )
            controls[k] = u
            degenerate += bool(info.degenerate)
        H[k] = cn.hamiltonian(q, costates[k], states[k], controls[k], float(tgrid[k]))
    eargs = (*spec.x0, *states[-1], spec.t0, tf)
    nu = _recover_event_multipliers(
        q, spec, costates[0], costates[-1], float(H[0]), float(H[-1]), eargs
    )
    tr = Trajectory(tgrid, states, controls, label)
    dual = DualTrajectory(costates, np.zeros((grid_points, q.nh)), nu, H, label)
    return SolveResult(tr, dual, result, spec, degenerate)


def solve_bvp(
    p: OCProblem,
    s: ScaleSet | None,
    guess: dict,
    **kwargs,
) -> tuple[Trajectory, DualTrajectory]:
    out = solve_bvp_full(p, s, guess, **kwargs)
    return out.trajectory, out.dual


def propagate_with_control(
    p: OCProblem,
    tr: Trajectory,
    opts: IntegratorOptions = IntegratorOptions(),
) -> np.ndarray:
    """Re-propagate the states under the trajectory's stored control.

    Linear interpolation of the control samples replaces the pointwise
    minimizer, giving an integration that is independent of the costates;
    the returned final state measures the endpoint miss honestly.
    """
    c = cn._tables(p)
    nx = p.nx
    t = tr.t
    uarr = tr.controls

    def rhs(tk, x):
        u = [np.interp(tk, t, uarr[:, m]) for m in range(p.nu)]
        args = (*x, *u, tk)
        return np.array([c.f[i](*args) for i in range(nx)])

    sol = rk45_propagate(rhs, tr.states[0], float(t[0]), float(t[-1]), opts)
    return sol.y_end
