"""``tempoly`` command line.

Every JSON document written by a subcommand carries ``seed``, ``version``
and ``command``. Exit codes: 0 success, 1 numerical failure, 2 usage error;
failures also print a JSON error document on stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    def __init__(self, reason: str, **extra):
        super().__init__(reason)
        self.reason = reason
        self.extra = extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _envelope(args, body: dict) -> dict:
    return {"seed": args.seed, "version": __version__, "command": args.argv, **body}


def _emit(args, body: dict) -> None:
    text = _dump(_envelope(args, body))
    out = getattr(args, "out", None)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}") from None


def _load_expr(path: str):
    from .ncpoly import PolyFormatError, expr_from_json

    try:
        return expr_from_json(_read_json(path))
    except PolyFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _target(name: str, d: int, n: int, perm: str | None):
    from .search import target_matrix

    p = [int(t) for t in perm.split(",")] if perm else None
    try:
        return target_matrix(name, d, n, p)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_construct(args) -> int:
    from . import constructions as C
    from .ncpoly import expr_to_json, load_omega

    kind = args.kind

    def swaps():
        if args.swap:
            return _load_expr(args.swap)
        if args.d == 2:
            return load_omega()
        return C.swap_poly_symbolic(args.d, args.seed).swap

    if kind == "qubit-rewind":
        obj = C.qubit_rewind(args.s)
    elif kind == "rewind":
        obj = C.rewind_poly(args.d, args.s)
    elif kind == "formanek":
        obj = C.formanek_central(args.d).poly
    elif kind == "swap-symbolic":
        try:
            bundle = C.swap_poly_symbolic(args.d, args.seed)
        except ValueError as exc:
            raise NumericalFailure("cost guard", detail=str(exc)) from None
        obj = getattr(bundle, args.which)
    elif kind == "perm":
        if not args.perm:
            raise UsageError("construct perm needs --perm")
        perm = [int(t) for t in args.perm.split(",")]
        obj = C.perm_poly(len(perm), args.d, perm, swaps() if args.d == 2 else C.swap_poly_symbolic(args.d, args.seed))
    elif kind in ("fast-forward", "fast-rewind"):
        if args.n is None or args.j is None:
            raise UsageError(f"construct {kind} needs --n and --j")
        if kind == "fast-forward":
            obj = C.compose_fast_forward(args.n, args.j, args.s, swaps(), args.d)
        else:
            if args.d != 2:
                raise UsageError("fast-rewind is available for d=2 (qubit rewinder)")
            obj = C.compose_fast_rewind(args.n, args.j, args.s, swaps(), C.qubit_rewind(args.s), args.d)
    else:  # argparse restricts choices
        raise UsageError(kind)
    doc = expr_to_json(obj) if not hasattr(obj, "to_json") else obj.to_json()
    # the document stays loadable by --poly: metadata keys sit beside the polynomial
    _emit(args, {**doc, "construction": kind})
    return EXIT_OK


def cmd_search(args) -> int:
    from . import search as S
    from .numkit import RngStream

    n = 2 if args.target == "swap" else (len(args.perm.split(",")) if args.perm else 2)
    target = _target(args.target, args.d, n, args.perm)
    cfg = S.GeneratorConfig(args.d, args.D, args.m, n, target, rng=RngStream.named(args.seed, f"search:m{args.m}"))
    try:
        res = S.run_search(cfg, args.mode)
    except S.SearchError as exc:
        raise NumericalFailure("search failed", detail=str(exc)) from None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    if args.mode == "dense":
        for i, p in enumerate(res.polys()):
            name = f"basis_{i:03d}.json"
            (out_dir / name).write_text(_dump(p.to_json()))
            files.append(name)
    report = {"dims": res.dims(), "bound": S.dim_bound(args.m, args.D, args.d),
              "ambient": cfg.ambient_dim,
              "draws": {"vperp": res.vperp.closure_draws_used, "nperp": res.nperp.closure_draws_used},
              "mode": args.mode, "target": args.target, "basis_files": files}
    if args.sparsify is not None and args.mode == "dense" and res.quotient.dim:
        null = S.null_space_basis(res.nperp)
        best = None
        for v in res.quotient.vectors:
            try:
                r = S.sparsify(v, null, args.sparsify, layout=res.layout, verify_target=target, d=args.d,
                               seed=args.seed)
            except S.SearchError:
                continue
            if best is None or r.nonzeros < best.nonzeros:
                best = r
            if best.budget_met:
                break
        if best is not None:
            (out_dir / "sparse.json").write_text(_dump(best.poly.to_json()))
            report["sparse"] = {"nonzeros": best.nonzeros, "budget_met": best.budget_met, "file": "sparse.json"}
    (out_dir / "report.json").write_text(_dump(_envelope(args, report)))
    sys.stdout.write(_dump(_envelope(args, report)))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .ncpoly import as_expr
    from .numkit import RngStream, fit_scalar, ginibre, haar_unitary

    expr = as_expr(_load_expr(args.poly))
    d = args.d
    if args.target == "central":
        target = np.eye(d**expr.n_parties)
    elif args.target == "rewind":
        target = None
    elif args.target == "translate":
        if args.j is None:
            raise UsageError("--target translate needs --j and --power")
        target = "translate"
    else:
        target = _target(args.target, d, expr.n_parties, args.perm)
    rng = RngStream.named(args.seed, f"verify:{args.kind}")
    if args.kind == "haar":
        x = haar_unitary(d, rng, (expr.n_vars, args.samples))
    else:
        x = ginibre(d, d, rng, (expr.n_vars, args.samples))
    vals = expr.evaluate(x)
    rows = []
    for i in range(args.samples):
        if target is None:
            # p ~ V^{-s}: p V^s ~ I
            r = fit_scalar(vals[i] @ np.linalg.matrix_power(x[0, i], args.s), np.eye(d))
        elif isinstance(target, str):
            op = np.ones((1, 1))
            for k in range(expr.n_parties):
                op = np.kron(op, np.linalg.matrix_power(x[0, i], args.power) if k == args.j else np.eye(d))
            r = fit_scalar(vals[i], op)
        else:
            r = fit_scalar(vals[i], target)
        ok = (not r.degenerate) and r.residual <= args.tol and r.scalar != 0
        rows.append({"sample": i, "residual": r.residual, "passed": bool(ok)})
    passes = sum(r["passed"] for r in rows)
    body = {"target": args.target, "samples": args.samples, "passes": passes, "tolerance": args.tol,
            "worst_residual": max(r["residual"] for r in rows), "results": rows}
    if passes != args.samples:
        # one JSON document on stdout: the failure record carries the report
        raise NumericalFailure("proportionality check failed", **body)
    _emit(args, body)
    return EXIT_OK


def _sampler(spec: str, d: int):
    from .protocol import ModelSampler

    if spec in ("haar", "ginibre"):
        return spec
    if spec.startswith("model:"):
        sampler = ModelSampler.from_json(_read_json(spec[len("model:"):]))
        if sampler.d != d:
            raise UsageError(f"model dimension {sampler.d} differs from --d {d}")
        return sampler
    raise UsageError(f"unknown sampler {spec!r}")


def cmd_simulate(args) -> int:
    from . import protocol as pr
    from .ncpoly import PolyFormatError
    from .numkit import RngStream

    if bool(args.poly) == bool(args.program):
        raise UsageError("give exactly one of --poly / --program")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.program:
        try:
            target = pr.program_from_json(_read_json(args.program))
        except (PolyFormatError, KeyError, ValueError) as exc:
            raise UsageError(f"{args.program}: {exc}") from None
        d = target.d
    else:
        target = _load_expr(args.poly)
        d = args.d
    est = pr.monte_carlo(target, _sampler(args.sampler, d), args.trials, RngStream.named(args.seed, "simulate"),
                         mode=args.mode, d=d, jobs=args.jobs, keep_samples=bool(args.csv))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "probability"])
            for i, p in enumerate(est.samples):
                w.writerow([i, repr(float(p))])
    _emit(args, {"mean": est.mean, "stderr": est.stderr, "trials": est.trials, "sampler": args.sampler,
                 "mode": est.mode})
    return EXIT_OK


def cmd_card(args) -> int:
    from .protocol import experiment_card

    expr = _load_expr(args.poly)
    _emit(args, {"card": experiment_card(expr.expand())})
    return EXIT_OK


def cmd_plan(args) -> int:
    from . import planner as P
    from .protocol import program_to_json

    try:
        targets = [Fraction(t) for t in args.targets.split(",")] if args.targets else []
        budget = Fraction(args.budget)
        q = P.FeasibilityQuery(args.d, args.n, budget, targets)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(str(exc)) from None
    ok, slack = P.feasible(q)
    if not ok:
        raise NumericalFailure("infeasible", slack=slack, demand=str(q.demand()), capacity=str(q.n * q.T_budget))
    sched = P.plan(q)
    body = {"feasible": True, "slack": slack, "schedule": sched.to_json()}
    if args.compile:
        if args.dt is None:
            raise UsageError("--compile needs --dt")
        try:
            prog, report = P.compile(sched, args.dt)
        except ValueError as exc:
            raise NumericalFailure("compile failed", detail=str(exc)) from None
        body["compile_report"] = report.to_json()
        if args.program_out:
            Path(args.program_out).write_text(_dump(_envelope(args, program_to_json(prog))))
            body["program_file"] = args.program_out
        else:
            body["program"] = program_to_json(prog)
    _emit(args, body)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .acceptance import run_criteria

    only = [int(t) for t in args.only.split(",")] if args.only else None
    echo = (lambda line: print(line, file=sys.stderr)) if not args.quiet else None
    t0 = time.perf_counter()
    results = run_criteria(only, seed=args.seed, jobs=args.jobs, echo=echo)
    report_dir = Path(args.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    body = {"criteria": [r.to_json() for r in results], "all_passed": all(r.passed for r in results)}
    (report_dir / "report.json").write_text(_dump(_envelope(args, body)))
    timings = {"wall_clock_s": {f"C{r.number:02d}": round(r.runtime, 3) for r in results},
               "total_s": round(time.perf_counter() - t0, 3)}
    (report_dir / "timings.json").write_text(_dump(_envelope(args, timings)))
    lines = ["| # | criterion | result | measured | target | tolerance | seed | wall clock (s) |",
             "|---|---|---|---|---|---|---|---|"]
    for r in results:
        lines.append(f"| {r.number} | {r.title} | {'PASS' if r.passed else 'FAIL'} | "
                     f"{json.dumps(r.measured, default=_json_default)} | {r.target} | {r.tolerance} | "
                     f"{r.seed} | {r.runtime:.1f} |")
    (report_dir / "summary.md").write_text("\n".join(lines) + "\n")
    failed = [r.number for r in results if not r.passed]
    if failed:
        raise NumericalFailure("acceptance criteria failed", failed=failed, **body)
    sys.stdout.write(_dump(_envelope(args, body)))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tempoly", description="Scattering protocols as tensor matrix polynomials.")
    parser.add_argument("--version", action="version", version=f"tempoly {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, out=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="TOML file with flag defaults (flags win)")
        if out:
            p.add_argument("--out", help="write the JSON document here instead of stdout")
        return p

    p = common(sub.add_parser("construct", help="build a polynomial"))
    p.add_argument("kind", choices=["qubit-rewind", "rewind", "formanek", "swap-symbolic", "perm",
                                    "fast-forward", "fast-rewind"])
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--s", type=int, default=1)
    p.add_argument("--n", type=int)
    p.add_argument("--j", type=int, help="0-based party index")
    p.add_argument("--perm", help="0-based permutation, comma separated")
    p.add_argument("--swap", help="two-party SWAP polynomial file (default: bundled fixture for d=2)")
    p.add_argument("--which", default="swap", choices=["swap", "identity", "sym", "antisym", "g_tilde", "h_tilde"])
    p.set_defaults(func=cmd_construct)

    p = common(sub.add_parser("search", help="quotient search for target polynomials"), out=False)
    p.add_argument("--target", choices=["swap", "identity", "perm"], default="swap")
    p.add_argument("--perm")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--D", type=int, default=2)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--mode", choices=["dense", "mps"], default="dense")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sparsify", type=int, metavar="BUDGET")
    p.set_defaults(func=cmd_search)

    p = common(sub.add_parser("verify", help="check eval(p) against a target on random draws"))
    p.add_argument("--poly", required=True)
    p.add_argument("--target", choices=["swap", "identity", "perm", "central", "rewind", "translate"],
                   required=True)
    p.add_argument("--j", type=int, help="translate target: 0-based party")
    p.add_argument("--power", type=int, default=0, help="translate target: p ~ V^power on party j")
    p.add_argument("--perm")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--s", type=int, default=0, help="rewind target: p ~ V^-s")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--kind", choices=["haar", "ginibre"], default="haar")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("simulate", help="Monte-Carlo success probability"))
    p.add_argument("--poly")
    p.add_argument("--program")
    p.add_argument("--sampler", default="haar")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--mode", choices=["canonical", "compressed"], default="canonical")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", help="write per-trial probabilities")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("card", help="experiment card for a polynomial"))
    p.add_argument("--poly", required=True)
    p.set_defaults(func=cmd_card)

    p = common(sub.add_parser("plan", help="feasibility and schedule for time translations"))
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--budget", required=True)
    p.add_argument("--targets", required=True, help="comma separated, e.g. 1,-1/2")
    p.add_argument("--dt", type=float)
    p.add_argument("--compile", action="store_true")
    p.add_argument("--program-out")
    p.set_defaults(func=cmd_plan)

    p = common(sub.add_parser("reproduce-paper", help="run the acceptance suite"), out=False)
    p.add_argument("--report-dir", default="reproduce-report")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--only", help="comma separated criterion numbers")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_reproduce)
    return parser


def _apply_config(parser: argparse.ArgumentParser, args, argv):
    """Re-parse with defaults taken from ``--config``; explicit flags still win."""
    data = tomllib.loads(Path(args.config).read_text())
    section = data.get(args.command, data)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = [k for k in section if not isinstance(section[k], dict) and k.replace("-", "_") not in known]
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in section.items() if not isinstance(v, dict)})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        if getattr(args, "config", None):
            try:
                args = _apply_config(parser, args, argv)
            except (OSError, tomllib.TOMLDecodeError) as exc:
                raise UsageError(f"config: {exc}") from None
        args.argv = ["tempoly", *argv]
        return args.func(args)
    except UsageError as exc:
        sys.stdout.write(_dump({"status": "error", "exit": EXIT_USAGE, "reason": "usage", "detail": str(exc),
                                "version": __version__}))
        print(f"tempoly: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        doc = {"status": "error", "exit": EXIT_NUMERIC, "reason": exc.reason, **exc.extra, "version": __version__}
        if args is not None:
            doc.update(seed=getattr(args, "seed", None), command=["tempoly", *argv])
        sys.stdout.write(_dump(doc))
        print(f"tempoly: {exc.reason}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
