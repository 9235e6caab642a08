"""Command-line front end: certify, simulate, sweep, verify, maxstep.

Exit status is 0 on success, 1 when a check fails or a run diverges and 2 on
usage errors or unreadable scenarios.
"""

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import gains, verify
from .errors import ConfigurationError, DelayFeedbackError, ScalingTooSmallError
from .scenario import BUILTIN, load_scenario
from .simcore import SAMPLING_MODES, simulate_cascade, simulate_chain

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _fmt(value):
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return "%.17g" % value
    if isinstance(value, (tuple, list)):
        return " ".join(_fmt(v) for v in value)
    return str(value)


def _emit(rows, fmt, out):
    """Write (key, value) pairs as ``key = value`` lines or a two-row CSV."""
    if fmt == "csv":
        out.write(",".join(k for k, _ in rows) + "\n")
        out.write(",".join(_fmt(v).replace(" ", ";") for _, v in rows) + "\n")
    else:
        width = max(len(k) for k, _ in rows)
        for k, v in rows:
            out.write(f"{k.ljust(width)} = {_fmt(v)}\n")


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="")


def _close_out(fh):
    if fh is not sys.stdout:
        fh.close()


# --------------------------------------------------------------------------
# certify


def _certificate_rows(gc, ec, cert):
    rows = [("n", gc.n), ("k", gc.k), ("|k|", gc.knorm), ("alpha", gc.alpha), ("beta", gc.beta),
            ("mu", gc.mu), ("M0", gc.M0)]
    rows += [(f"M{i + 1}", m) for i, m in enumerate(gc.M)]
    rows += [("K0", ec.K0)] + [(f"K{i + 1}", k) for i, k in enumerate(ec.K)]
    rows += [("h", cert.h), ("cond1", cert.cond1), ("cond2", cert.cond2), ("valid", cert.valid)]
    if cert.valid:
        rows += [("c", cert.c), ("log_Lrem", cert.log_Lrem), ("Lrem", cert.Lrem), ("Q0", cert.Q0)]
        rows += [(f"Q{i + 1}", q) for i, q in enumerate(cert.Q)]
        rows += [("Qe", cert.Qe)]
    return rows


def cmd_certify(args, sc):
    gc, ec = sc.gain_certificate(), sc.estimator_constants()
    h_star = gains.max_certified_step(gc, ec)
    h = h_star if args.h is None else args.h
    cert = gains.step_certificate(gc, ec, h)
    rows = _certificate_rows(gc, ec, cert) + [("h_star", h_star)]
    ok = cert.valid
    if sc.is_cascade:
        gamma = gains.EXAMPLE32_GAMMA if sc.gamma is None else sc.gamma
        lhyp = gains.EXAMPLE32_LHYP if sc.lhyp is None else sc.lhyp
        cz = gains.EXAMPLE32_CZ if sc.cz is None else sc.cz
        rows += [("b", h_star), ("gamma", gamma), ("Lhyp", lhyp), ("cz", cz), ("r", sc.r)]
        try:
            design = gains.scaled_design(gc, ec, h_star, gamma, lhyp, cz, sc.r)
        except ScalingTooSmallError as exc:
            rows += [("Rb", exc.Rb), ("cascade_certified", False)]
            ok = False
        else:
            rows += [("Rb", design.Rb), ("cascade_certified", True), ("h_scaled", design.h),
                     ("mu_tilde", design.mu_tilde), ("env_Q", design.env_Q),
                     ("env_K", design.env_K), ("env_M", design.env_M)]
    fh = _open_out(args.out)
    try:
        _emit(rows, args.format, fh)
    finally:
        _close_out(fh)
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------
# simulate


def _run(sc, h, t_end, dt_div, sampling, k=None, abort_norm=1e12):
    plant = sc.make_plant()
    k = sc.k if k is None else tuple(k)
    dt = h / dt_div
    hist = sc.make_history()
    if sc.is_cascade:
        design = gains.unscaled_design(k, h / sc.r, sc.r)
        return simulate_cascade(plant, design, sc.z0, hist, sc.v, sc.e, sc.d, T_end=t_end,
                                dt=dt / sc.r, abort_norm=abort_norm, sampling=sampling)
    return simulate_chain(plant, k, h, hist, sc.v, sc.e, sc.d or None, T_end=t_end, dt=dt,
                          abort_norm=abort_norm, sampling=sampling)


def write_csv(traj, fh):
    n = traj.n
    kz = 0 if traj.z is None else traj.z.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"z{i + 1}" for i in range(kz)] + ["u", "y"]
    fh.write(",".join(header) + "\n")
    cols = [traj.times[:, None], traj.x]
    if kz:
        cols.append(traj.z)
    cols += [traj.u[:, None], traj.y[:, None]]
    np.savetxt(fh, np.hstack(cols), fmt="%.17g", delimiter=",")


def write_gnuplot(path, csv_path, ncols):
    with open(path, "w") as fh:
        fh.write("set datafile separator ','\n")
        fh.write("set key autotitle columnhead\n")
        fh.write("set xlabel 't'\n")
        fh.write(f"plot for [i=2:{ncols}] '{csv_path}' using 1:i with lines\n")


def cmd_simulate(args, sc):
    h = _resolve_h(args, sc)
    sampling = args.sampling or sc.sampling
    traj = _run(sc, h, args.tend or sc.t_end, args.dt_div or sc.dt_div, sampling)
    fh = _open_out(args.out)
    try:
        write_csv(traj, fh)
    finally:
        _close_out(fh)
    if args.gnuplot:
        if args.out in (None, "-"):
            raise _UsageError("--gnuplot needs --out FILE")
        ncols = 1 + traj.n + (0 if traj.z is None else traj.z.shape[1]) + 2
        write_gnuplot(args.gnuplot, args.out, ncols)
    final = float(np.linalg.norm(traj.x[-1]))
    if traj.diverged:
        print(f"diverged at t={traj.diverged_time:.6g}", file=sys.stderr)
        return EXIT_FAIL
    print(f"h={h:.6g} t_end={traj.times[-1]:.6g} |x(t_end)|={final:.6g}", file=sys.stderr)
    return EXIT_OK


def _resolve_h(args, sc):
    h = sc.resolve_h() if args.h is None else args.h
    if not h > 0:
        raise _UsageError("h must be positive")
    return h


# --------------------------------------------------------------------------
# sweep


def _sweep_values(args):
    if args.values:
        return [float(v) for v in args.values.split(",")]
    if args.range:
        lo, hi, num = args.range
        return list(np.linspace(float(lo), float(hi), int(num)))
    raise _UsageError("sweep needs --values or --range")


def cmd_sweep(args, sc):
    values = _sweep_values(args)
    param = args.param
    sampling = args.sampling or sc.sampling
    t_end = args.tend or sc.t_end
    dt_div = args.dt_div or sc.dt_div
    base_h = None if param == "h" else _resolve_h(args, sc)
    if param != "h":
        if not (param.startswith("k") and param[1:].isdigit() and 1 <= int(param[1:]) <= sc.n):
            raise _UsageError(f"--param must be h or k1..k{sc.n}")
        idx = int(param[1:]) - 1

    def one(value):
        if param == "h":
            h, k = value, sc.k
        else:
            h, k = base_h, list(sc.k)
            k[idx] = value
        traj = _run(sc, h, t_end, dt_div, sampling, k=k, abort_norm=1e6)
        norms = traj.state_norm()
        return value, float(norms[-1]), float(norms.max()), traj.diverged

    # rows come out sorted by value whatever order the workers finish in
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(one, sorted(values)))
    fh = _open_out(args.out)
    try:
        fh.write(f"{param},final_norm,max_norm,diverged\n")
        for value, final, peak, div in results:
            fh.write(f"{value:.17g},{final:.17g},{peak:.17g},{int(div)}\n")
    finally:
        _close_out(fh)
    return EXIT_OK


# --------------------------------------------------------------------------
# verify


def _report_line(name, status, detail):
    return f"{name}: {status} {detail}"


def cmd_verify(args, sc):
    gc, ec = sc.gain_certificate(), sc.estimator_constants()
    checks = ("estimator", "fading") if args.check == "all" else (args.check,)
    lines, ok = [], True
    if "estimator" in checks:
        h = args.h if args.h is not None else (sc.h if isinstance(sc.h, float) else 0.1)
        rep = verify.check_estimator_bound(sc.n, min(h, 1.0), args.runs, constants=ec, seed=args.seed)
        ok &= rep.passed
        lines.append(_report_line(
            "estimator-bound", "PASS" if rep.passed else "FAIL",
            f"h={rep.details['h']:.6g} runs={args.runs} violations={rep.details['violations']} "
            f"worst_ratio={rep.max_ratio:.6g}",
        ))
    if "fading" in checks:
        h_star = gains.max_certified_step(gc, ec)
        plant = None if sc.is_cascade else sc.make_plant()
        reps = verify.fading_memory_trials(gc, ec, h_star, args.runs, seed=args.seed,
                                           T_end=args.tend or 1.0, plant=plant)
        passed = all(r.passed for r in reps)
        vacuous = any(r.vacuous for r in reps)
        ok &= passed
        lines.append(_report_line(
            "fading-memory", "PASS" if passed else "FAIL",
            f"h={h_star:.6g} runs={args.runs} worst_ratio={max(r.max_ratio for r in reps):.6g}"
            + (" (vacuous: infinite constants)" if vacuous else ""),
        ))
    for line in lines:
        print(line)
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------
# maxstep


def cmd_maxstep(args, sc):
    if sc.is_cascade:
        raise _UsageError("maxstep works on chain scenarios")
    setup = verify.ChainSetup(
        sc.make_plant(), sc.k, sc.make_history(), sc.v, sc.e, sc.d or None,
        T_end=args.tend or 200.0, dt_div=args.dt_div or sc.dt_div,
        sampling=args.sampling or sc.sampling,
    )
    h = verify.empirical_max_step(setup, args.lo, args.hi, args.tol)
    print(f"h_max = {h:.6g}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--scenario", default="example31",
                        help=f"built-in ({', '.join(BUILTIN)}, chain(N)) or scenario file")
    common.add_argument("--h", type=float, help="sampling step (default: scenario value)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--seed", type=int, default=0)

    sim = _Parser(add_help=False)
    sim.add_argument("--tend", type=float, help="final time")
    sim.add_argument("--dt-div", type=int, help="integration steps per sampling step")
    sim.add_argument("--sampling", choices=SAMPLING_MODES)

    p = _Parser(prog="delayfb", description="Delayed output feedback for integrator chains.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("certify", parents=[common], help="step certificate and constants")
    c.add_argument("--format", choices=("kv", "csv"), default="kv")
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("simulate", parents=[common, sim], help="closed-loop run, CSV output")
    s.add_argument("--gnuplot", help="also write a gnuplot script plotting the CSV")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", parents=[common, sim], help="parameter sweep summary")
    w.add_argument("--param", default="h", help="h or k1..kn")
    w.add_argument("--values", help="comma separated values")
    w.add_argument("--range", nargs=3, metavar=("LO", "HI", "NUM"))
    w.add_argument("--workers", type=int, default=4)
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", parents=[common, sim], help="empirical checks of the estimates")
    v.add_argument("--check", choices=("estimator", "fading", "all"), default="all")
    v.add_argument("--runs", type=int, default=20)
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("maxstep", parents=[common, sim], help="empirical stability boundary in h")
    m.add_argument("--lo", type=float, default=0.05)
    m.add_argument("--hi", type=float, default=0.5)
    m.add_argument("--tol", type=float, default=5e-3)
    m.set_defaults(func=cmd_maxstep)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        sc = load_scenario(args.scenario)
        return args.func(args, sc)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"delayfb: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DelayFeedbackError as exc:
        print(f"delayfb: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
