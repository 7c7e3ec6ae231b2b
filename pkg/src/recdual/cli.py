"""``recdual`` command line: validate, solve, policy, simulate, example, ramsey.

Every command writes a flat ``key=value`` manifest next to its output
(``<out>.manifest``, or ``recdual-<command>.manifest`` in ``--manifest-dir``
for commands that print to stdout).  The manifest is written on failure too,
with an ``error`` entry.

Exit codes: 0 success, 1 invalid model or configuration, 2 solver did not
converge, 3 file could not be read or written.
"""
from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .io import ModelParseError, load_field, load_model, save_field
from .model import validate

log = logging.getLogger("recdual")

# Every numeric default used by the command line, in one place.
DEFAULTS = {
    # solve
    "variant": "infsup",
    "grid_n": 128,  # knots per constraint when --gamma-step is not given
    "grid_knee": 1.0,  # spacing is near uniform below this weight, geometric above
    "gamma_max": None,  # None: 4L/eps with --slater-eps, else 10L/(1-beta)
    "gamma_step": None,  # uniform knots 0, step, ... up to gamma_max instead
    "tol": 1e-8,  # weighted norm of successive iterates that stops the iteration
    "max_iter": 500,
    "inner_tol": 1e-11,  # relative bracket width of the multiplier line search
    "slater_eps": None,
    # policy / simulate
    "iters": 10_000,  # subgradient steps per stage
    "sigma0": 1.0,  # step sizes sigma0 / k
    "paths": 10_000,
    "horizon": 40,
    "seed": 0,
    "quantum": 1e-6,  # promises closer than this share one stage solve
    "solver_tol": 1e-3,  # discretization allowance when judging simulated values
    # example
    "beta": 0.4,
    "sigma": 0.1,
    # ramsey
    "b_init": 0.45,
    "rev_tol": 2e-3,
    "margin": 1e-3,
    "curve_points": 1000,
    # misc
    "threads": 0,  # 0: library default
}

EXIT_OK, EXIT_INVALID, EXIT_NOCONV, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}", EXIT_INVALID)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(x) for x in np.ravel(v))
    return str(v)


def write_manifest(path, config, results, error=None, wall=0.0):
    lines = [f"recdual_version={__version__}", f"python={platform.python_version()}",
             f"numpy={np.__version__}"]
    try:
        import scipy

        lines.append(f"scipy={scipy.__version__}")
    except ImportError:  # pragma: no cover
        pass
    lines.append(f"wall_time_s={wall:.3f}")
    lines.append(f"error={'' if error is None else str(error).replace(chr(10), ' ')}")
    lines += [f"config.{k}={_fmt(v)}" for k, v in sorted(config.items())]
    lines += [f"result.{k}={_fmt(v)}" for k, v in results.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _thread_limit(n):
    if not n:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.info("threadpoolctl not installed; --threads ignored")
        return nullcontext()
    return threadpool_limits(limits=n)


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load_model(path):
    try:
        spec = load_model(path)
    except ModelParseError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    except OSError as exc:
        raise CliError(f"cannot read model: {exc}", EXIT_IO) from exc
    problems = validate(spec)
    if problems:
        raise CliError("invalid model:\n  " + "\n  ".join(problems), EXIT_INVALID)
    return spec


def _load_field(path):
    try:
        return load_field(path)
    except OSError as exc:
        raise CliError(f"cannot read field: {exc}", EXIT_IO) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc


def _positive(name, value):
    if value is not None and not value > 0:
        raise CliError(f"--{name.replace('_', '-')} must be positive", EXIT_INVALID)


# -- commands ------------------------------------------------------------------


def cmd_validate(args, results):
    try:
        spec = load_model(args.model)
    except ModelParseError as exc:
        results["violations"] = 1
        print(exc)
        raise CliError("model file does not parse", EXIT_INVALID) from exc
    except OSError as exc:
        raise CliError(f"cannot read model: {exc}", EXIT_IO) from exc
    problems = validate(spec)
    results["violations"] = len(problems)
    for p in problems:
        print(p)
    if problems:
        raise CliError(f"{len(problems)} violation(s)", EXIT_INVALID)
    print("ok")


def cmd_solve(args, results):
    from .dual_value import default_gamma_max, make_gamma_grid, value_iterate

    for name in ("tol", "inner_tol", "gamma_max", "gamma_step", "slater_eps"):
        _positive(name, getattr(args, name))
    spec = _load_model(args.model)
    gm = args.gamma_max or default_gamma_max(spec, args.slater_eps)
    if args.gamma_step:
        grid = np.arange(0.0, gm + 0.5 * args.gamma_step, args.gamma_step)
    else:
        grid = make_gamma_grid(gm, args.grid_n, args.grid_knee)
    field, rep = value_iterate(spec, args.variant, gamma_grid=grid, tol=args.tol,
                               max_iter=args.max_iter, slater_eps=args.slater_eps,
                               inner_tol=args.inner_tol)
    root = float(field.evaluate_many(np.zeros((1, spec.n_constraints)), spec.x0, 0)[0])
    results.update(iterations=rep.iterations, converged=rep.converged, monotone=rep.monotone,
                   final_norm=rep.norms[-1], root_value=root, gamma_max=float(grid[-1]),
                   knots=grid.size)
    try:
        save_field(field, args.out)
        if args.report:
            _write_csv(args.report, ("iter", "norm", "max_monotonicity_violation"), rep.rows())
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_IO) from exc
    print(f"root_value={root!r} iterations={rep.iterations} converged={rep.converged}")
    if not rep.converged:
        raise CliError(f"no convergence after {rep.iterations} sweeps "
                       f"(norm {rep.norms[-1]:.3g})", EXIT_NOCONV)


def _phi(arg, spec):
    from .policy import initial_promise

    if arg == "auto":
        return initial_promise(spec)
    try:
        phi = np.array([float(v) for v in arg.split(",")])
    except ValueError as exc:
        raise CliError(f"--phi: expected 'auto' or comma separated numbers, got {arg!r}",
                       EXIT_INVALID) from exc
    if phi.size != spec.n_constraints:
        raise CliError(f"--phi needs {spec.n_constraints} value(s)", EXIT_INVALID)
    return phi


def cmd_policy(args, results):
    from .policy import check_stage, recover_stage

    _positive("sigma0", args.sigma0)
    spec = _load_model(args.model)
    field = _load_field(args.field)
    phi = _phi(args.phi, spec)
    x = spec.x0 if args.x is None else args.x
    lot = recover_stage(spec, field, phi, x, args.s, n_iter=args.iters, sigma0=args.sigma0)
    chk = check_stage(spec, field, phi, x, args.s, lot)
    labels = spec.names.get("actions") if spec.names else None
    S, I = spec.n_shocks, spec.n_constraints
    header = ["action", "label", "prob"] + [f"lambda_{i}" for i in range(I)]
    header += [f"promise_s{s}_{i}" for s in range(S) for i in range(I)]
    rows = []
    for j, a in enumerate(lot.support):
        label = "" if labels is None else str(labels[a]).replace(",", ";").replace(" ", "")
        rows.append([int(a), label, float(lot.probs[j]), *lot.lam_for(a).tolist(),
                     *lot.promised[j].ravel().tolist()])
    try:
        _write_csv(args.out, header, rows)
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_IO) from exc
    results.update(chk.as_dict())
    results.update(mu=lot.mu, outside_tie_set=chk.outside_tie_set,
                   box_exceeded=lot.box_exceeded, support_size=lot.support.size)


def cmd_simulate(args, results):
    from .policy import simulate

    _positive("paths", args.paths)
    _positive("horizon", args.horizon)
    spec = _load_model(args.model)
    field = _load_field(args.field)
    res = simulate(spec, field, x0=args.x, s0=args.s, T=args.horizon, n_paths=args.paths,
                   rng_seed=args.seed, n_iter=args.iters, sigma0=args.sigma0,
                   quantum=args.quantum)
    ok = res.within(solver_tol=args.solver_tol)
    results.update(value=res.value, stderr=res.stderr, target=res.target,
                   truncation=res.truncation, within_tolerance=ok, stages=res.stages,
                   constraint_checks_ok=all(c["ok"] for c in res.constraint_checks),
                   promise_checks_ok=all(c["ok"] for c in res.promise_checks))
    results.update({f"worst_{k}": v for k, v in res.worst_stage.items()})
    if args.out:
        try:
            with open(args.out, "w") as fh:
                for line in res.csv_lines(spec):
                    fh.write(line + "\n")
        except OSError as exc:
            raise CliError(f"cannot write output: {exc}", EXIT_IO) from exc
    _write_csv(None, ("value", "stderr", "target", "within_tolerance"),
               [(res.value, res.stderr, res.target, ok)])


def cmd_example(args, results):
    from .oracles import example1_values, example2_solve

    try:
        if args.which == "1":
            vals = example1_values(args.beta)
            header, row = ("V0", "V1", "V2"), [vals["V0"], vals["V1"], vals["V2"]]
        else:
            sol = example2_solve(args.sigma)
            header, row = ("beta", "V"), [sol["beta"], sol["V"]]
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    results.update(zip(header, row))
    _write_csv(None, header, [[round(v, 6) for v in row]])


def cmd_ramsey(args, results):
    from . import ramsey

    sc = ramsey.RamseyScenario()
    try:
        if args.ramsey_cmd == "scatter":
            rows = ramsey.enumerate_scatter(sc, branch2=args.branch, lottery=args.lottery)
            results["rows"] = len(rows)
            _write_csv(args.out, ramsey.SCATTER_COLUMNS, rows)
        elif args.ramsey_cmd == "curves":
            rows = ramsey.curves(args.points)
            results["rows"] = len(rows)
            results["max_debt_g065"] = ramsey.max_debt(0.65)[0]
            _write_csv(args.out, ramsey.CURVE_COLUMNS, rows)
        else:
            out = ramsey.dominance_check(sc, args.b_init, rev_tol=args.rev_tol,
                                         margin=args.margin)
            keys = ("b_init", "feasible", "best_det", "best_lottery", "gap", "dominates")
            results.update({k: out[k] for k in keys})
            for name in ("det_plan", "lottery_plan"):
                for k, v in (out[name] or {}).items():
                    results[f"{name}.{k}"] = v
            _write_csv(args.out, keys, [[out[k] for k in keys]])
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_IO) from exc


# -- argument parsing ------------------------------------------------------------


def build_parser():
    d = DEFAULTS
    p = _Parser(prog="recdual", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS threads (0 = library default; env RECDUAL_THREADS)")
    p.add_argument("--manifest-dir", default=".",
                   help="where manifests of stdout-only commands go")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check a model file")
    v.add_argument("model")

    s = sub.add_parser("solve", help="compute the dual value field")
    s.add_argument("model")
    s.add_argument("--variant", choices=("infsup", "supinf"), default=d["variant"])
    s.add_argument("--gamma-max", type=float, default=d["gamma_max"])
    s.add_argument("--grid-n", type=int, default=d["grid_n"])
    s.add_argument("--grid-knee", type=float, default=d["grid_knee"])
    s.add_argument("--gamma-step", type=float, default=d["gamma_step"])
    s.add_argument("--tol", type=float, default=d["tol"])
    s.add_argument("--inner-tol", type=float, default=d["inner_tol"])
    s.add_argument("--max-iter", type=int, default=d["max_iter"])
    s.add_argument("--slater-eps", type=float, default=d["slater_eps"])
    s.add_argument("--out", default="field.bin")
    s.add_argument("--report", default=None, help="per-iteration CSV")

    for name, help_ in (("policy", "recover one stage lottery"),
                        ("simulate", "simulate the chained lotteries")):
        q = sub.add_parser(name, help=help_)
        q.add_argument("model")
        q.add_argument("field")
        q.add_argument("--iters", type=int, default=d["iters"])
        q.add_argument("--sigma0", type=float, default=d["sigma0"])
        q.add_argument("--x", type=int, default=None, help="state (default: model x0)")
        q.add_argument("--s", type=int, default=0, help="shock")
        q.add_argument("--out", default=None)
        if name == "policy":
            q.add_argument("--phi", default="auto")
        else:
            q.add_argument("--paths", type=int, default=d["paths"])
            q.add_argument("--horizon", type=int, default=d["horizon"])
            q.add_argument("--seed", type=int, default=d["seed"])
            q.add_argument("--quantum", type=float, default=d["quantum"])
            q.add_argument("--solver-tol", type=float, default=d["solver_tol"])

    e = sub.add_parser("example", help="closed-form values of the worked examples")
    e.add_argument("which", choices=("1", "2"))
    e.add_argument("--beta", type=float, default=d["beta"])
    e.add_argument("--sigma", type=float, default=d["sigma"])

    r = sub.add_parser("ramsey", help="two-period taxation outputs")
    rs = r.add_subparsers(dest="ramsey_cmd", required=True, parser_class=_Parser)
    sc = rs.add_parser("scatter")
    sc.add_argument("--branch", choices=("L", "H"), default="H")
    sc.add_argument("--lottery", action="store_true")
    sc.add_argument("--out", default=None)
    dm = rs.add_parser("dominance")
    dm.add_argument("--b-init", type=float, default=d["b_init"])
    dm.add_argument("--rev-tol", type=float, default=d["rev_tol"])
    dm.add_argument("--margin", type=float, default=d["margin"])
    dm.add_argument("--out", default=None)
    cv = rs.add_parser("curves")
    cv.add_argument("--points", type=int, default=d["curve_points"])
    cv.add_argument("--out", default=None)
    return p


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "policy": cmd_policy,
            "simulate": cmd_simulate, "example": cmd_example, "ramsey": cmd_ramsey}


def _manifest_path(args):
    out = getattr(args, "out", None)
    if out:
        return Path(str(out) + ".manifest")
    name = args.command + (f"-{args.ramsey_cmd}" if args.command == "ramsey" else "")
    return Path(args.manifest_dir) / f"recdual-{name}.manifest"


def run(argv=None):
    """Execute one subcommand and return its exit code."""
    start = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None:
        try:
            args.threads = int(os.environ.get("RECDUAL_THREADS", DEFAULTS["threads"]))
        except ValueError:
            args.threads = DEFAULTS["threads"]
    config = {k: v for k, v in vars(args).items() if v is not None}
    results, error, code = {}, None, EXIT_OK
    try:
        with _thread_limit(args.threads):
            COMMANDS[args.command](args, results)
    except CliError as exc:
        error, code = exc, exc.code
    except OSError as exc:
        error, code = exc, EXIT_IO
    except ValueError as exc:
        error, code = exc, EXIT_INVALID
    if error is not None:
        print(f"error: {error}", file=sys.stderr)
    try:
        write_manifest(_manifest_path(args), config, results, error,
                       time.perf_counter() - start)
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        code = code or EXIT_IO
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
