"""Command-line driver: ``flexamg <subcommand> ...``.

Exit status is 0 on success, 2 for invalid input (arguments, configs, cycle
files) and 1 for runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cycle import (ProgramError, assemble_iteration_matrix, iteration_eigenvalues, spectral_radius,
                    validate_program)
from .cycle_io import DslError, parse_program, program_to_dot
from .evolve import (EvoParams, evaluate_program, evolve, export_individuals, make_problem,
                     write_front_csv, write_log)
from .hierarchy import build_hierarchy
from .krylov import HybridConfig, Preconditioner, hybrid_solve, pcg, reference_solver_program
from .problems import (TimestepSpec, build_timestep_matrix, diagonal_dominance_ratio, parse_problem,
                       random_vector)
from .sparse import write_matrix_market

log = logging.getLogger("flexamg")


class ConfigError(ValueError):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


def _program_factory(args):
    """Callable hierarchy -> program from ``--solver`` or ``--program``."""
    if getattr(args, "program", None):
        prog = parse_program(Path(args.program).read_text())
        return lambda H: validate_program(prog, H)
    name = getattr(args, "solver", None) or "default"
    return lambda H: reference_solver_program(name, H)


def _solver_label(args) -> str:
    return Path(args.program).stem if getattr(args, "program", None) else (args.solver or "default")


def _writer(path):
    fh = open(path, "w", newline="") if path else sys.stdout
    return fh, csv.writer(fh, lineterminator="\n")


def cmd_gen_problem(args, cfg) -> int:
    label, A, spec = parse_problem(args.problem)
    write_matrix_market(args.out, A, comment=f"flexamg {label}")
    print(f"{label}: {A.shape[0]} rows, {A.nnz} nonzeros, eta={diagonal_dominance_ratio(A):.6g} -> {args.out}")
    return 0


def cmd_hierarchy_info(args, cfg) -> int:
    _, A, _ = parse_problem(args.problem)
    H = build_hierarchy(A, theta=args.theta, seed=args.seed)
    fh, w = _writer(args.out)
    w.writerow(["level", "rows", "nnz", "complexity"])
    for l in range(H.L, -1, -1):
        lev = H.levels[l]
        w.writerow([l, lev.nrows, lev.nnz, repr(lev.nnz / H.levels[-1].nnz)])
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_eval(args, cfg) -> int:
    factory = _program_factory(args)
    fh, w = _writer(args.out)
    w.writerow(["solver", "problem", "N", "rho", "wu_total", "converged"])
    for text in args.problem:
        p = make_problem(text, args.target, seed=args.seed, tol=args.tol)
        if args.mode:
            p.stop_mode = args.mode
        fit, meta = evaluate_program(factory, [p], args.max_iter)
        w.writerow([_solver_label(args), text, int(meta["N"]), repr(fit[1]), repr(meta["wu_total"]),
                    meta["converged"]])
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_spectrum(args, cfg) -> int:
    _, A, _ = parse_problem(args.problem)
    H = build_hierarchy(A, seed=args.seed)
    prog = _program_factory(args)(H)
    E = assemble_iteration_matrix(prog, H)
    lam = iteration_eigenvalues(E)
    lam = lam[np.lexsort((lam.imag, lam.real))]
    fh, w = _writer(args.out)
    w.writerow(["re", "im"])
    for z in lam:
        w.writerow([repr(float(z.real)), repr(float(z.imag))])
    if fh is not sys.stdout:
        fh.close()
    log.info("spectral radius %.6g", spectral_radius(E))
    return 0


def cmd_export_dot(args, cfg) -> int:
    if args.problem:
        _, A, _ = parse_problem(args.problem)
        H = build_hierarchy(A, seed=args.seed)
        prog = _program_factory(args)(H)
    elif args.program:
        prog = parse_program(Path(args.program).read_text())
        validate_program(prog)
    else:
        prog = reference_solver_program(args.solver or "default", args.levels)
    text = program_to_dot(prog, _solver_label(args))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _timestep_spec(args, cfg) -> TimestepSpec:
    opts = dict(cfg.get("timestep", {}))
    opts.setdefault("nd", args.nd)
    opts.setdefault("k_max", args.k_max)
    return TimestepSpec(**opts)


def cmd_timesteps(args, cfg) -> int:
    spec = _timestep_spec(args, cfg)
    factory = _program_factory(args)
    fh, w = _writer(args.out)
    w.writerow(["k", "parity", "N", "wu_total", "switched", "eta"])
    for k in range(1, spec.k_max + 1):
        A = build_timestep_matrix(spec, k)
        b = random_vector(A.shape[0], args.seed + k)
        if args.precond == "hybrid":
            res = hybrid_solve(A, b, factory, HybridConfig(args.threshold, args.window), args.tol,
                               args.max_iter, hierarchy_kwargs={"seed": args.seed})
            stats, switched = res.stats, res.switched
        else:
            if args.precond == "diagonal":
                M = Preconditioner.diagonal_of(A)
            else:
                H = build_hierarchy(A, seed=args.seed)
                M = Preconditioner.amg(factory(H), H)
            _, stats = pcg(A, b, M, args.tol, args.max_iter)
            switched = args.precond == "amg"
        w.writerow([k, "odd" if k % 2 else "even", stats.N, repr(stats.wu_total), switched,
                    repr(diagonal_dominance_ratio(A))])
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_hybrid(args, cfg) -> int:
    _, A, _ = parse_problem(args.problem)
    b = random_vector(A.shape[0], args.seed + 1)
    res = hybrid_solve(A, b, _program_factory(args), HybridConfig(args.threshold, args.window),
                       args.tol, args.max_iter, hierarchy_kwargs={"seed": args.seed})
    fh, w = _writer(args.out)
    w.writerow(["problem", "N", "rho", "wu_total", "converged", "switched", "switch_iter"])
    w.writerow([args.problem, res.stats.N, repr(res.stats.rho), repr(res.stats.wu_total),
                res.stats.converged, res.switched, res.switch_iter])
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_evolve(args, cfg) -> int:
    evo_cfg = dict(cfg.get("evolution", {}))
    if args.preset:
        evo_cfg["preset"] = args.preset
    for key in ("mu", "lam", "rho0", "t_max"):
        if getattr(args, key) is not None:
            evo_cfg[key] = getattr(args, key)
    evo_cfg["seed"] = args.seed
    evo_cfg["workers"] = args.workers
    try:
        params = EvoParams.from_dict(evo_cfg)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{args.config or 'command line'}: evolution: {exc}") from None
    problems = args.problem or cfg.get("problems") or ["poisson:32:1e-3,1,1"]
    target = args.target or cfg.get("target", "solver")
    setup_seed = cfg.get("setup_seed", 0)
    insts = [make_problem(p, target, seed=setup_seed) for p in problems]
    out = Path(args.out or cfg.get("outputs", {}).get("dir", "evolve_out"))
    out.mkdir(parents=True, exist_ok=True)

    def progress(s):
        log.info("generation %d: front %d, hypervolume %.6g, best rho %.4g",
                 s["gen"], s["front_size"], s["hypervolume"], s["best_rho"])

    res = evolve(insts, params, on_generation=progress)
    write_log(out / "log.jsonl", res)
    write_front_csv(out / "front.csv", res.front)
    export_individuals(out / "individuals", res.front)
    print(f"front of {len(res.front)} individuals written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flexamg", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def solver_args(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--solver", help="reference solver name (default, tuned-1 .. tuned-6, tuned-pcg)")
        g.add_argument("--program", help="cycle DSL file")

    p = sub.add_parser("gen-problem", help="write a test matrix in Matrix Market format")
    p.add_argument("--problem", required=True, help="poisson:ND:c1,c2,c3 or timestep:ND:K")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_problem)

    p = sub.add_parser("hierarchy-info", help="level sizes and operator complexities")
    p.add_argument("--problem", required=True)
    p.add_argument("--theta", type=float, default=0.25)
    p.add_argument("--out")
    p.set_defaults(func=cmd_hierarchy_info)

    p = sub.add_parser("evolve", help="run grammar-guided evolution")
    p.add_argument("--preset", choices=("full", "desk", "smoke"))
    p.add_argument("--problem", action="append")
    p.add_argument("--target", choices=("solver", "pcg"))
    for key in ("mu", "lam", "rho0", "t_max"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("eval", help="solve statistics CSV for a cycle on problems")
    solver_args(p)
    p.add_argument("--problem", action="append", required=True)
    p.add_argument("--target", choices=("solver", "pcg"), default="solver")
    p.add_argument("--tol", type=float)
    p.add_argument("--mode", choices=("absolute", "relative"))
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spectrum", help="iteration-matrix eigenvalues CSV")
    solver_args(p)
    p.add_argument("--problem", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("export-dot", help="Graphviz drawing of a cycle")
    solver_args(p)
    p.add_argument("--problem")
    p.add_argument("--levels", type=int, default=4, help="finest level index for reference cycles")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_dot)

    def ts_args(p):
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--max-iter", type=int, default=1000)
        p.add_argument("--threshold", type=float, default=0.65)
        p.add_argument("--window", type=int, default=5)

    p = sub.add_parser("timesteps", help="solve the surrogate time-step sequence")
    solver_args(p)
    p.add_argument("--nd", type=int, default=16)
    p.add_argument("--k-max", type=int, default=20)
    p.add_argument("--precond", choices=("amg", "diagonal", "hybrid"), default="amg")
    ts_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_timesteps)

    p = sub.add_parser("hybrid", help="diagonal-to-AMG switching PCG on one system")
    solver_args(p)
    p.add_argument("--problem", required=True)
    ts_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_hybrid)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, ProgramError, DslError, ValueError, KeyError, TypeError,
            FileNotFoundError) as exc:
        print(f"flexamg: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"flexamg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
