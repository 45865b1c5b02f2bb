"""Checks on what unit scaling can and cannot do for a discretization.

Two separate effects are quantified here.  First, applying a
grid-dependent scale pointwise does not commute with forward
differencing: differencing the raw samples and differencing the scaled
samples leave a defect of exactly (P_{k+1}-P_k)(xtilde_{k+1}-xtilde_k)
per component, which is first order in the mesh whenever the scale
varies, so a time-varying scale quietly edits the discrete dynamics
unless the discretization uses a matching discrete product rule.
Second, the spectral radius of the dynamics Jacobian transforms under
constant scaling by the bare time factor, so the product of the horizon
length and the spectral radius is the same in any unit system; no
constant unit choice can shrink it.  State-dependent scale feedback
P(t, x) raises stability questions of its own and is out of scope.

Eigenvalues for the spectral checks come from an in-house Hessenberg
reduction plus shifted QR iteration; the matrices here are tiny and
keeping the contract free of an external eigensolver makes the audit
self-contained.
"""

from __future__ import annotations

import cmath
import csv
import dataclasses
import json
import math

import numpy as np

from . import conditions as cn
from .problem import OCProblem, Trajectory
from .scaling import ScaleSet, descale_primal, rescale_primal, scale_problem

__all__ = [
    "AuditError",
    "ScaleSequence",
    "linear_sequence",
    "DiscreteScalingReport",
    "discrete_scaling_error",
    "additional_dynamics",
    "eigenvalues",
    "matrix_spectral_radius",
    "spectral_radius",
    "SensitivityReport",
    "sensitivity_invariance",
    "save_discrete_error_csv",
    "save_sensitivity_csv",
]

_MAX_EIG_DIM = 16


class AuditError(ValueError):
    pass


# ---------------------------------------------------------------------------
# grid-aligned scale sequences
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ScaleSequence:
    """Per-component scale factors P_k (and shifts q_k) on a time grid.

    Any interpolant with P(t_k) = P_k realizes the same discrete data, so
    the audit never needs the interpolant itself, only the samples.
    """

    t: np.ndarray
    P: np.ndarray
    q: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        q = self.q
        q = np.zeros_like(P) if q is None else np.asarray(q, dtype=float)
        if q.ndim == 1:
            q = q[:, None]
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        if t.ndim != 1 or t.shape[0] < 2:
            raise AuditError("grid must be 1-d with at least two samples")
        if np.any(np.diff(t) <= 0.0):
            raise AuditError("grid must be strictly increasing")
        if P.shape[0] != t.shape[0] or q.shape != P.shape:
            raise AuditError("scale samples do not match the grid")
        if np.any(P == 0.0):
            raise AuditError("scale factors must be nonzero")

    @property
    def m(self) -> int:
        return self.P.shape[1]


def linear_sequence(
    t, P_start, P_end, q_start=None, q_end=None
) -> ScaleSequence:
    """Scale samples ramping linearly from one end of the grid to the other."""
    t = np.asarray(t, dtype=float)
    a = np.atleast_1d(np.asarray(P_start, dtype=float))
    b = np.atleast_1d(np.asarray(P_end, dtype=float))
    frac = (t - t[0]) / (t[-1] - t[0])
    P = a[None, :] + frac[:, None] * (b - a)[None, :]
    q = None
    if q_start is not None or q_end is not None:
        qa = np.atleast_1d(np.asarray(0.0 if q_start is None else q_start, dtype=float))
        qb = np.atleast_1d(np.asarray(0.0 if q_end is None else q_end, dtype=float))
        q = qa[None, :] + frac[:, None] * (qb - qa)[None, :]
    return ScaleSequence(t=t, P=P, q=q)


def _aligned_samples(seq: ScaleSequence, xtilde) -> np.ndarray:
    xt = np.asarray(xtilde, dtype=float)
    if xt.ndim == 1:
        xt = xt[:, None]
    if xt.shape != seq.P.shape:
        raise AuditError(
            f"sample shape {xt.shape} does not match scale samples {seq.P.shape}"
        )
    return xt


# ---------------------------------------------------------------------------
# discrete scaling defect
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class DiscreteScalingReport:
    """Forward-difference defect of pointwise scaling, per interval."""

    error: np.ndarray  # (N, m): (P_{k+1}-P_k)(xtilde_{k+1}-xtilde_k)
    sup_norm: float
    sup_dx: float  # sup |x_{k+1} - x_k| of the unscaled samples
    ratio: float  # sup_norm / sup_dx; how loud the defect is


def discrete_scaling_error(
    seq: ScaleSequence, xtilde
) -> DiscreteScalingReport:
    """Defect between differencing raw samples and scaled samples.

    Expanding the forward difference of the product P*xtilde with leading
    index k leaves the cross term (dP_k)(dxtilde_k); the function computes
    the defect both as that expansion residual and as the product of
    differences, and refuses to continue if the two disagree beyond
    accumulated roundoff, since they are algebraically identical.
    """
    xt = _aligned_samples(seq, xtilde)
    P = seq.P
    dP = P[1:] - P[:-1]
    dxt = xt[1:] - xt[:-1]
    product = dP * dxt

    Pxt = P * xt
    residual = (Pxt[1:] - Pxt[:-1]) - P[:-1] * dxt - dP * xt[:-1]
    # the two forms agree to rounding in the O(|P x|) intermediates
    slack = 8.0 * np.finfo(float).eps * (
        np.abs(Pxt[1:]) + np.abs(Pxt[:-1]) + np.abs(product)
    )
    if np.any(np.abs(residual - product) > slack):
        raise AuditError("discrete product identity violated")  # pragma: no cover

    x = Pxt + seq.q
    dx = x[1:] - x[:-1]
    sup_norm = float(np.max(np.abs(product), initial=0.0))
    sup_dx = float(np.max(np.abs(dx), initial=0.0))
    if sup_norm == 0.0:
        ratio = 0.0
    elif sup_dx == 0.0:
        ratio = math.inf
    else:
        ratio = sup_norm / sup_dx
    return DiscreteScalingReport(
        error=product, sup_norm=sup_norm, sup_dx=sup_dx, ratio=ratio
    )


def additional_dynamics(seq: ScaleSequence, xtilde, pt: float) -> np.ndarray:
    """Spurious velocity term a time-varying scale adds to the dynamics.

    Returns pt * P(t_k)^{-1} (Pdot(t_k) xtilde_k + qdot(t_k)) with the
    time derivatives taken by centered differences on the grid (one-sided
    at the ends).  A scale that freezes in time contributes exactly zero.
    """
    xt = _aligned_samples(seq, xtilde)
    if np.any(np.abs(seq.P) < 1e-12):
        raise AuditError("scale factors too close to zero to invert")
    t = seq.t

    def ddt(z):
        out = np.empty_like(z)
        out[1:-1] = (z[2:] - z[:-2]) / (t[2:] - t[:-2])[:, None]
        out[0] = (z[1] - z[0]) / (t[1] - t[0])
        out[-1] = (z[-1] - z[-2]) / (t[-1] - t[-2])
        return out

    return pt * (ddt(seq.P) * xt + ddt(seq.q)) / seq.P


# ---------------------------------------------------------------------------
# eigenvalues of small dense matrices
# ---------------------------------------------------------------------------


def _hessenberg(A: np.ndarray) -> np.ndarray:
    H = np.array(A, dtype=float, copy=True)
    n = H.shape[0]
    for k in range(n - 2):
        col = H[k + 1 :, k]
        norm = math.sqrt(float(col @ col))
        if norm == 0.0:
            continue
        alpha = -math.copysign(norm, col[0]) if col[0] != 0.0 else -norm
        v = col.copy()
        v[0] -= alpha
        vnorm = math.sqrt(float(v @ v))
        if vnorm == 0.0:  # pragma: no cover - alpha != col only if col != 0
            continue
        v /= vnorm
        H[k + 1 :, k:] -= 2.0 * np.outer(v, v @ H[k + 1 :, k:])
        H[:, k + 1 :] -= 2.0 * np.outer(H[:, k + 1 :] @ v, v)
    return H


def _eig2(a, b, c, d):
    tr = a + d
    disc = cmath.sqrt((a - d) * (a - d) + 4.0 * b * c)
    return 0.5 * (tr + disc), 0.5 * (tr - disc)


def eigenvalues(A, max_steps: int | None = None) -> np.ndarray:
    """All eigenvalues of a small real matrix, complex pairs included.

    Hessenberg reduction followed by shifted QR with Givens rotations in
    complex arithmetic; trailing 1x1 and 2x2 blocks deflate in closed
    form.  Intended for dynamics Jacobians, hence the small-dimension cap.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise AuditError("matrix must be square")
    if n > _MAX_EIG_DIM:
        raise AuditError(f"matrix dimension {n} exceeds the cap {_MAX_EIG_DIM}")
    if n == 0:
        return np.zeros(0, dtype=complex)
    if max_steps is None:
        max_steps = 100 * n
    H = _hessenberg(A).astype(complex)
    eig = []
    m = n
    steps = 0
    while m > 0:
        if m == 1:
            eig.append(H[0, 0])
            break
        # deflate off a negligible bottom subdiagonal entry
        tail = abs(H[m - 1, m - 2])
        if tail <= 1e-15 * (abs(H[m - 2, m - 2]) + abs(H[m - 1, m - 1])):
            eig.append(H[m - 1, m - 1])
            m -= 1
            continue
        if m == 2:
            eig.extend(_eig2(H[0, 0], H[0, 1], H[1, 0], H[1, 1]))
            break
        steps += 1
        if steps > max_steps:
            raise AuditError(
                f"QR iteration did not converge within {max_steps} steps"
            )
        # Wilkinson shift: trailing 2x2 eigenvalue nearest the corner
        w1, w2 = _eig2(
            H[m - 2, m - 2], H[m - 2, m - 1], H[m - 1, m - 2], H[m - 1, m - 1]
        )
        corner = H[m - 1, m - 1]
        mu = w1 if abs(w1 - corner) <= abs(w2 - corner) else w2
        # implicit-free explicit step: QR of (H - mu I) by Givens, then RQ
        for i in range(m):
            H[i, i] -= mu
        rot = []
        for i in range(m - 1):
            a, b = H[i, i], H[i + 1, i]
            r = math.hypot(abs(a), abs(b))
            if r == 0.0:
                c, s = 1.0 + 0.0j, 0.0 + 0.0j
            else:
                c, s = a / r, b / r
            rot.append((c, s))
            rows = H[[i, i + 1], i:m]
            H[i, i:m] = np.conj(c) * rows[0] + np.conj(s) * rows[1]
            H[i + 1, i:m] = -s * rows[0] + c * rows[1]
        for i, (c, s) in enumerate(rot):
            hi = min(i + 2, m)
            cols = H[:hi, [i, i + 1]]
            H[:hi, i] = cols[:, 0] * c + cols[:, 1] * s
            H[:hi, i + 1] = -cols[:, 0] * np.conj(s) + cols[:, 1] * np.conj(c)
        for i in range(m):
            H[i, i] += mu
    return np.array(eig, dtype=complex)


def matrix_spectral_radius(A, max_steps: int | None = None) -> float:
    vals = eigenvalues(A, max_steps)
    return float(np.max(np.abs(vals))) if vals.size else 0.0


def _dynamics_jacobian(c, nx: int, args) -> np.ndarray:
    return np.array(
        [[c.fx[j][i](*args) for i in range(nx)] for j in range(nx)],
        dtype=float,
    )


def spectral_radius(p: OCProblem, x, u, t: float) -> float:
    """Spectral radius of the dynamics Jacobian at one stage point."""
    if p.nx > _MAX_EIG_DIM:
        raise AuditError(
            f"problem has {p.nx} states, above the eigensolver cap {_MAX_EIG_DIM}"
        )
    c = cn._tables(p)
    args = (
        *np.atleast_1d(np.asarray(x, dtype=float)),
        *np.atleast_1d(np.asarray(u, dtype=float)),
        float(t),
    )
    return matrix_spectral_radius(_dynamics_jacobian(c, p.nx, args))


# ---------------------------------------------------------------------------
# horizon-spectral-radius product across unit systems
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class SensitivityReport:
    """Horizon-times-spectral-radius products in both unit systems."""

    t: np.ndarray
    rho: np.ndarray
    rho_scaled: np.ndarray
    product: np.ndarray  # (tf - t0) * rho_k
    product_scaled: np.ndarray
    max_rel_err: float
    similarity_max_diff: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err <= self.tol


def sensitivity_invariance(
    p: OCProblem, s: ScaleSet, tr: Trajectory, tol: float = 1e-8
) -> SensitivityReport:
    """Check that rescaling units cannot shrink horizon-Jacobian stiffness.

    At every grid point the scaled Jacobian is evaluated twice, from the
    scaled problem's own expressions and as the similarity transform
    pt * Px^{-1} (df/dx) Px of the original one, and the products
    (horizon length) x (spectral radius) are compared across the two unit
    systems.  Equality is a theorem for constant scales; the report
    records how closely the computation honors it.
    """
    base = descale_primal(tr, s) if tr.label == "scaled" else tr
    scaled = rescale_primal(base, s)
    sp = scale_problem(p, s)
    c = cn._tables(p)
    cs = cn._tables(sp)
    Px = np.asarray(s.Px, dtype=float)
    n = base.t.shape[0]

    rho = np.empty(n)
    rho_s = np.empty(n)
    sim_diff = 0.0
    for k in range(n):
        args = (*base.states[k], *base.controls[k], base.t[k])
        J = _dynamics_jacobian(c, p.nx, args)
        sargs = (*scaled.states[k], *scaled.controls[k], scaled.t[k])
        Js = _dynamics_jacobian(cs, p.nx, sargs)
        similar = s.pt * (J * Px[None, :]) / Px[:, None]
        gap = np.max(np.abs(Js - similar)) / (1.0 + np.max(np.abs(Js)))
        sim_diff = max(sim_diff, float(gap))
        rho[k] = matrix_spectral_radius(J)
        rho_s[k] = matrix_spectral_radius(Js)

    horizon = base.t[-1] - base.t[0]
    horizon_s = scaled.t[-1] - scaled.t[0]
    product = horizon * rho
    product_s = horizon_s * rho_s
    denom = np.maximum(np.abs(product), np.abs(product_s))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(denom > 0.0, np.abs(product - product_s) / denom, 0.0)
    return SensitivityReport(
        t=base.t,
        rho=rho,
        rho_scaled=rho_s,
        product=product,
        product_scaled=product_s,
        max_rel_err=float(np.max(rel)),
        similarity_max_diff=sim_diff,
        tol=tol,
    )


# ---------------------------------------------------------------------------
# dumps
# ---------------------------------------------------------------------------


def save_discrete_error_csv(
    path: str, seq: ScaleSequence, rep: DiscreteScalingReport
) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"error_{j}" for j in range(rep.error.shape[1])])
        for k in range(rep.error.shape[0]):
            w.writerow([repr(float(seq.t[k]))]
                       + [repr(float(v)) for v in rep.error[k]])


def save_sensitivity_csv(path: str, rep: SensitivityReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "rho", "rho_scaled", "product", "product_scaled"])
        for k in range(rep.t.shape[0]):
            w.writerow([
                repr(float(rep.t[k])), repr(float(rep.rho[k])),
                repr(float(rep.rho_scaled[k])), repr(float(rep.product[k])),
                repr(float(rep.product_scaled[k])),
            ])


def sensitivity_report_to_dict(rep: SensitivityReport) -> dict:
    return {
        "max_rel_err": rep.max_rel_err,
        "similarity_max_diff": rep.similarity_max_diff,
        "tol": rep.tol,
        "ok": bool(rep.ok),
        "product_range": [float(np.min(rep.product)), float(np.max(rep.product))],
    }
