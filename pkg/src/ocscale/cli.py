"""Command-line front end: solve, verify, balance, and audit from files.

Artifact layout is deterministic: identical inputs produce byte-identical
data files.  Run metadata that legitimately varies (timestamps, command
line, versions) is quarantined in meta.json and never appears in data
files.  stdout carries a single summary line per run; everything else
goes to stderr.

Exit codes: 0 success, 1 schema or usage problems, 2 numeric solver
failure, 3 a verification or invariance check that ran and failed.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
from importlib import metadata, resources

import numpy as np

from . import audit as au
from . import balance as ba
from . import conditions as cn
from . import problem as pb
from . import scaling as sc
from . import solver as sv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_VERIFY = 3

_DEMO_SCALES = ("unscaled", "set1", "set2", "set3")


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the contract reserves 2
    # for numeric failures, so usage problems are rerouted to 1
    def error(self, message):
        raise _CliError(EXIT_USAGE, f"usage error: {message}")


# ---------------------------------------------------------------------------
# argument resolution
# ---------------------------------------------------------------------------


def _data_names(kind: str) -> list[str]:
    folder = resources.files("ocscale").joinpath(f"data/{kind}")
    return sorted(
        entry.name[: -len(".json")]
        for entry in folder.iterdir()
        if entry.name.endswith(".json")
    )


def _resolve_problem(arg: str) -> pb.OCProblem:
    if os.path.exists(arg):
        return pb.load_problem(arg)
    builtins = _data_names("problems")
    if arg in builtins:
        text = (
            resources.files("ocscale")
            .joinpath(f"data/problems/{arg}.json")
            .read_text()
        )
        return pb.problem_from_dict(json.loads(text))
    raise _CliError(
        EXIT_USAGE,
        f"unknown problem {arg!r}; builtins: {', '.join(builtins)}",
    )


def _resolve_scales(arg: str | None, p: pb.OCProblem) -> sc.ScaleSet | None:
    if arg is None or arg == "unscaled":
        return None
    if os.path.exists(arg):
        return sc.load_scale_set(arg, p)
    if arg in sc.BUILTIN_SCALE_SETS:
        return sc.builtin_scale_set(arg, p)
    raise _CliError(
        EXIT_USAGE,
        f"unknown scale set {arg!r}; builtins: "
        f"{', '.join(sorted(sc.BUILTIN_SCALE_SETS))}, or a JSON file path",
    )


def _resolve_guess(guess_path: str | None, problem_arg: str) -> dict:
    if guess_path is not None:
        if not os.path.exists(guess_path):
            raise _CliError(
                EXIT_USAGE, f"guess file not found: {guess_path}"
            )
        with open(guess_path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise _CliError(EXIT_USAGE, f"guess file {guess_path} must hold an object")
        return data
    shipped = _data_names("guesses")
    if problem_arg in shipped:
        text = (
            resources.files("ocscale")
            .joinpath(f"data/guesses/{problem_arg}.json")
            .read_text()
        )
        return json.loads(text)
    raise _CliError(
        EXIT_USAGE,
        f"no --guess given and no shipped guess for {problem_arg!r} "
        f"(shipped: {', '.join(shipped)})",
    )


def _integrator_options(args) -> sv.IntegratorOptions:
    if getattr(args, "tol", None) is None:
        return sv.IntegratorOptions()
    return sv.IntegratorOptions(rel_tol=args.tol, abs_tol=1e-2 * args.tol)


def _outdir(args) -> str:
    out = getattr(args, "out", None) or "."
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# artifact writing
# ---------------------------------------------------------------------------


def _write_meta(outdir: str, argv: list[str]) -> None:
    try:
        version = metadata.version("ocscale")
    except metadata.PackageNotFoundError:  # pragma: no cover
        version = "unknown"
    meta = {
        "command": argv,
        "written": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "package": f"ocscale {version}",
        "python": sys.version.split()[0],
    }
    with open(os.path.join(outdir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def _write_solution(
    outdir: str,
    p: pb.OCProblem,
    s: sc.ScaleSet | None,
    tr: pb.Trajectory,
    d: pb.DualTrajectory,
    tol: cn.ToleranceSet,
    figures: bool,
) -> tuple[bool, ba.MagnitudeReport]:
    """Write the artifact set for one solution; returns (verified, report).

    When a scale set is in play the solved pair is the scaled one: both it
    and the descaled original-unit pair are written, and verification must
    pass on both sides.
    """
    if s is None or s.is_identity():
        base_tr, base_d = tr, d
        scaled_pair = None
    else:
        base_tr = sc.descale_primal(tr, s)
        base_d = sc.descale_dual(d, s)
        scaled_pair = (tr, d)

    pb.save_trajectory(base_tr, p, os.path.join(outdir, "trajectory.csv"))
    pb.save_dual(base_d, base_tr.t, os.path.join(outdir, "dual.csv"))
    pb.save_event_multipliers(
        base_d.event_multipliers, os.path.join(outdir, "nu.json")
    )
    rep = cn.verify(p, base_tr, base_d, tol)
    cn.save_report(rep, os.path.join(outdir, "report.json"))
    ok = rep.overall_pass

    if scaled_pair is not None:
        str_, sd = scaled_pair
        pb.save_trajectory(str_, p, os.path.join(outdir, "trajectory_scaled.csv"))
        pb.save_dual(sd, str_.t, os.path.join(outdir, "dual_scaled.csv"))
        pb.save_event_multipliers(
            sd.event_multipliers, os.path.join(outdir, "nu_scaled.json")
        )
        sp = sc.scale_problem(p, s)
        rep_s = cn.verify(sp, str_, sd, tol)
        cn.save_report(rep_s, os.path.join(outdir, "report_scaled.json"))
        ok = ok and rep_s.overall_pass

    mag = ba.magnitude_report(tr, d, p)
    ba.save_magnitude_report(mag, os.path.join(outdir, "magnitude.json"))

    if figures:
        from . import plots

        plots.save_primal_figure(
            base_tr, p, os.path.join(outdir, "trajectory.png")
        )
        plots.save_dual_figure(
            base_d, base_tr.t, p, os.path.join(outdir, "dual.png")
        )
    return ok, mag


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _solve_common(args, argv: list[str], problem_arg: str) -> int:
    p = _resolve_problem(problem_arg)
    s = _resolve_scales(args.scale, p)
    guess = _resolve_guess(args.guess, problem_arg)
    outdir = _outdir(args)
    try:
        result = sv.solve_bvp_full(
            p,
            s,
            guess,
            opts=_integrator_options(args),
            multistart=args.multistart,
            seed=args.seed,
        )
    except sv.SolverError as err:
        raise _CliError(EXIT_NUMERIC, f"solver failure: {err}") from err
    print(
        f"newton: {result.newton.message} in {result.newton.iterations} "
        f"iterations, residual {result.newton.residual_norm:.3e}",
        file=sys.stderr,
    )
    ok, mag = _write_solution(
        outdir, p, s, result.trajectory, result.dual,
        cn.ToleranceSet(), not args.no_figures,
    )
    _write_meta(outdir, argv)
    scale_name = args.scale or "unscaled"
    verdict = "pass" if ok else "FAIL"
    print(
        f"{p.name or problem_arg} scale={scale_name}: verify={verdict} "
        f"score={mag.score:.3f} out={outdir}"
    )
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_demo(args, argv: list[str]) -> int:
    builtins = _data_names("problems")
    if args.name not in builtins:
        raise _CliError(
            EXIT_USAGE,
            f"unknown demo {args.name!r}; builtins: {', '.join(builtins)}",
        )
    return _solve_common(args, argv, args.name)


def cmd_solve(args, argv: list[str]) -> int:
    return _solve_common(args, argv, args.problem)


def cmd_verify(args, argv: list[str]) -> int:
    p = _resolve_problem(args.problem)
    tr = pb.load_trajectory(args.trajectory, p)
    nu_path = args.nu
    if nu_path is None:
        # the solve artifact set keeps event multipliers in a sidecar next
        # to the dual table; pick it up when present so a solution
        # directory verifies without extra flags
        sidecar = os.path.join(
            os.path.dirname(os.path.abspath(args.dual)), "nu.json"
        )
        if os.path.exists(sidecar):
            nu_path = sidecar
            print(f"event multipliers: {sidecar}", file=sys.stderr)
    nu = pb.load_event_multipliers(nu_path) if nu_path is not None else None
    d = pb.load_dual(args.dual, p, event_multipliers=nu)
    tol = cn.ToleranceSet()
    if args.tol is not None:
        tol = cn.ToleranceSet(algebraic=args.tol, grid=100.0 * args.tol)
    rep = cn.verify(p, tr, d, tol)
    outdir = _outdir(args)
    cn.save_report(rep, os.path.join(outdir, "report.json"))
    _write_meta(outdir, argv)
    worst = max(rep.groups, key=lambda g: g.value / g.tol if g.tol else 0.0)
    verdict = "pass" if rep.overall_pass else "FAIL"
    print(
        f"verify {p.name or args.problem}: {verdict} "
        f"worst={worst.name}:{worst.value:.3e} out={outdir}"
    )
    return EXIT_OK if rep.overall_pass else EXIT_VERIFY


def cmd_balance(args, argv: list[str]) -> int:
    p = _resolve_problem(args.problem)
    s0 = _resolve_scales(args.scale, p)
    guess = _resolve_guess(args.guess, args.problem)
    outdir = _outdir(args)
    try:
        best_s, tr, d, steps = ba.balance_iterate(
            p, s0, guess, max_iter=args.max_iter, opts=_integrator_options(args)
        )
    except sv.SolverError as err:
        raise _CliError(EXIT_NUMERIC, f"solver failure: {err}") from err
    ba.save_balance_history(steps, os.path.join(outdir, "balance_history.json"))
    with open(os.path.join(outdir, "scales.json"), "w", encoding="utf-8") as fh:
        json.dump(sc.scale_set_to_dict(best_s), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _, best_rep = _write_solution(
        outdir, p, best_s, tr, d, cn.ToleranceSet(), not args.no_figures
    )
    _write_meta(outdir, argv)
    first = steps[0].report.score if steps[0].report is not None else float("nan")
    solves = sum(1 for st in steps if st.solved)
    print(
        f"balance {p.name or args.problem}: score {first:.3f} -> "
        f"{best_rep.score:.3f} in {solves} solves out={outdir}"
    )
    return EXIT_OK


def _read_table(path: str) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise _CliError(EXIT_USAGE, f"cannot read {path}: {err}") from err
    if not rows or len(rows) < 3:
        raise _CliError(EXIT_USAGE, f"{path}: need a header and two samples")
    header = rows[0]
    if not header or header[0] != "t":
        raise _CliError(EXIT_USAGE, f"{path}: first column must be t")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as err:
        raise _CliError(EXIT_USAGE, f"{path}: {err}") from err
    return header, data


def _read_sequence(path: str) -> au.ScaleSequence:
    header, data = _read_table(path)
    pcols = [i for i, h in enumerate(header) if h.startswith("P")]
    qcols = [i for i, h in enumerate(header) if h.startswith("q")]
    if not pcols:
        raise _CliError(EXIT_USAGE, f"{path}: no P columns found")
    if qcols and len(qcols) != len(pcols):
        raise _CliError(EXIT_USAGE, f"{path}: q columns do not match P columns")
    return au.ScaleSequence(
        t=data[:, 0],
        P=data[:, pcols],
        q=data[:, qcols] if qcols else None,
    )


def cmd_audit(args, argv: list[str]) -> int:
    outdir = _outdir(args)
    payload: dict = {"mode": args.mode}
    code = EXIT_OK
    if args.mode == "discrete":
        seq = _read_sequence(args.scales)
        header, data = _read_table(args.samples)
        if not np.array_equal(seq.t, data[:, 0]):
            raise _CliError(
                EXIT_USAGE, "scale and sample files disagree on the time grid"
            )
        rep = au.discrete_scaling_error(seq, data[:, 1:])
        payload["discrete"] = {
            "sup_norm": rep.sup_norm,
            "sup_dx": rep.sup_dx,
            "ratio": rep.ratio,
        }
        if args.dump:
            au.save_discrete_error_csv(
                os.path.join(outdir, "discrete_error.csv"), seq, rep
            )
        line = f"audit discrete: sup_norm={rep.sup_norm:.6e} ratio={rep.ratio:.6e}"
    elif args.mode == "dynamics":
        seq = _read_sequence(args.scales)
        header, data = _read_table(args.samples)
        if not np.array_equal(seq.t, data[:, 0]):
            raise _CliError(
                EXIT_USAGE, "scale and sample files disagree on the time grid"
            )
        term = au.additional_dynamics(seq, data[:, 1:], args.pt)
        sup = float(np.max(np.abs(term)))
        payload["dynamics"] = {"sup_norm": sup, "pt": args.pt}
        if args.dump:
            with open(
                os.path.join(outdir, "additional_dynamics.csv"),
                "w", encoding="utf-8", newline="",
            ) as fh:
                w = csv.writer(fh)
                w.writerow(["t"] + [f"term_{j}" for j in range(term.shape[1])])
                for k in range(term.shape[0]):
                    w.writerow(
                        [repr(float(seq.t[k]))]
                        + [repr(float(v)) for v in term[k]]
                    )
        line = f"audit dynamics: sup_norm={sup:.6e}"
    else:  # sensitivity
        p = _resolve_problem(args.problem)
        s = _resolve_scales(args.scale, p)
        if s is None:
            s = sc.identity_scales(p)
        tr = pb.load_trajectory(args.trajectory, p)
        rep = au.sensitivity_invariance(
            p, s, tr, tol=args.tol if args.tol is not None else 1e-8
        )
        payload["sensitivity"] = au.sensitivity_report_to_dict(rep)
        if args.dump:
            au.save_sensitivity_csv(os.path.join(outdir, "sensitivity.csv"), rep)
        verdict = "ok" if rep.ok else "FAIL"
        line = (
            f"audit sensitivity: {verdict} max_rel_err={rep.max_rel_err:.3e} "
            f"similarity={rep.similarity_max_diff:.3e}"
        )
        code = EXIT_OK if rep.ok else EXIT_VERIFY
    with open(os.path.join(outdir, "audit.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_meta(outdir, argv)
    print(f"{line} out={outdir}")
    return code


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_solver_flags(sub):
    sub.add_argument("--scale", default=None,
                     help="scale set: builtin name, JSON file, or 'unscaled'")
    sub.add_argument("--guess", default=None, help="guess JSON file")
    sub.add_argument("--tol", type=float, default=None,
                     help="integrator relative tolerance override")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--seed", type=int, default=None,
                     help="seed for multistart sampling")
    sub.add_argument("--multistart", type=int, default=0, metavar="N",
                     help="scattered retries if the plain solve fails")
    sub.add_argument("--no-figures", action="store_true",
                     help="skip PNG rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ocscale",
                     description="scale, solve, verify, balance, audit")
    subs = parser.add_subparsers(dest="command", required=True)

    demo = subs.add_parser("demo", help="run a shipped benchmark end to end")
    demo.add_argument("name", nargs="?", default="brachistochrone")
    _add_solver_flags(demo)

    solve = subs.add_parser("solve", help="solve a problem file")
    solve.add_argument("problem", help="problem JSON file or builtin name")
    _add_solver_flags(solve)

    verify = subs.add_parser("verify", help="check a stored solution")
    verify.add_argument("problem")
    verify.add_argument("trajectory", help="trajectory CSV")
    verify.add_argument("dual", help="dual CSV")
    verify.add_argument("--nu", default=None, help="event multiplier JSON")
    verify.add_argument("--tol", type=float, default=None,
                        help="algebraic residual tolerance")
    verify.add_argument("--out", default=None)

    balance = subs.add_parser("balance", help="iterate scale proposals")
    balance.add_argument("problem")
    balance.add_argument("--max-iter", type=int, default=3)
    _add_solver_flags(balance)

    audit = subs.add_parser("audit", help="discretization and spectral audits")
    audit_subs = audit.add_subparsers(dest="mode", required=True)
    disc = audit_subs.add_parser("discrete",
                                 help="pointwise-scaling difference defect")
    disc.add_argument("scales", help="CSV with t and P (and q) columns")
    disc.add_argument("samples", help="CSV with t and sample columns")
    dyn = audit_subs.add_parser("dynamics",
                                help="spurious term from a moving scale")
    dyn.add_argument("scales")
    dyn.add_argument("samples")
    dyn.add_argument("--pt", type=float, default=1.0,
                     help="time scale factor")
    sens = audit_subs.add_parser("sensitivity",
                                 help="horizon-spectral-radius invariance")
    sens.add_argument("problem")
    sens.add_argument("scale", help="scale set: builtin name or JSON file")
    sens.add_argument("trajectory", help="trajectory CSV")
    sens.add_argument("--tol", type=float, default=None)
    for mode_parser in (disc, dyn, sens):
        mode_parser.add_argument("--out", default=None)
        mode_parser.add_argument("--dump", action="store_true",
                                 help="write per-point CSV")
    return parser


_DISPATCH = {
    "demo": cmd_demo,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "balance": cmd_balance,
    "audit": cmd_audit,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _DISPATCH[args.command](args, argv)
    except _CliError as err:
        print(err.message, file=sys.stderr)
        return err.code
    except sv.SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        pb.ProblemError,
        sc.ScaleError,
        cn.ConditionsError,
        ba.BalanceError,
        au.AuditError,
        json.JSONDecodeError,
        OSError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
