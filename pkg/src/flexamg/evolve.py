"""NSGA-II selection and the grammar-guided evolution loop."""
from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .cycle import DIVERGED_RHO, FlexProgram, cycle_work_units, run_solver, validate_program
from .cycle_io import format_program, program_to_dot
from .grammar import Grammar, Node, crossover, genotype_to_program, mutate, random_derivation, tree_key
from .hierarchy import Hierarchy, build_hierarchy
from .krylov import Preconditioner, pcg
from .problems import parse_problem, random_vector, zero_vector

__all__ = [
    "EvoParams", "PRESETS", "ProblemInstance", "make_problem", "Individual", "Fitness",
    "evaluate_program", "evaluate_population", "fast_nondominated_sort", "crowding_distance",
    "nsga2_select", "dominates", "hypervolume_2d", "EvolutionResult", "evolve", "merge_fronts",
    "write_front_csv", "write_log", "export_individuals",
]

log = logging.getLogger(__name__)

#: finite stand-in for infinite cost inside crowding-distance arithmetic
_INF_STANDIN = 1e30


@dataclass
class EvoParams:
    mu: int = 256
    lam: int = 256
    rho0: int = 2048
    pc: float = 0.7
    t_max: int = 100
    seed: int = 0
    depth_cap: int = 170
    init_depth: int = 40
    n_flex: int = 5
    include_zero_weight: bool = False
    fitness_mode: str = "work_units"
    workers: int = 1
    max_iter: int = 100

    def __post_init__(self):
        if min(self.mu, self.lam, self.rho0) < 1 or self.t_max < 0:
            raise ValueError("mu, lam, rho0 must be positive and t_max non-negative")
        if self.rho0 < self.mu:
            raise ValueError("rho0 must be at least mu")
        if not 0.0 <= self.pc <= 1.0:
            raise ValueError("pc must lie in [0, 1]")
        if self.fitness_mode not in ("work_units", "wall_clock"):
            raise ValueError(f"unknown fitness mode {self.fitness_mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def preset(cls, name: str, **overrides) -> "EvoParams":
        try:
            base = PRESETS[name]
        except KeyError:
            raise KeyError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
        return cls(**{**base, **overrides})

    @classmethod
    def from_dict(cls, d: dict) -> "EvoParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"preset"}
        if unknown:
            raise ValueError(f"unknown evolution parameters {sorted(unknown)}")
        rest = {k: v for k, v in d.items() if k != "preset"}
        return cls.preset(d["preset"], **rest) if "preset" in d else cls(**rest)

    def grammar(self) -> Grammar:
        return Grammar(self.n_flex, self.include_zero_weight, self.depth_cap, self.init_depth)


PRESETS = {
    "full": dict(mu=256, lam=256, rho0=2048, pc=0.7, t_max=100),
    "desk": dict(mu=32, lam=32, rho0=128, pc=0.7, t_max=20),
    "smoke": dict(mu=8, lam=8, rho0=16, pc=0.7, t_max=2),
}


@dataclass
class ProblemInstance:
    """A proxy system with its hierarchy.

    ``target`` is ``solver`` (stationary iteration, ``tol`` absolute or relative
    per ``stop_mode``) or ``pcg`` (AMG-preconditioned CG, relative ``tol``).
    """

    label: str
    hierarchy: Hierarchy
    b: np.ndarray
    x0: np.ndarray
    target: str = "solver"
    tol: float = 1e-8
    stop_mode: str = "absolute"

    @property
    def A(self) -> sp.csr_matrix:
        return self.hierarchy.levels[-1].A


def make_problem(text: str, target: str = "solver", seed: int = 0, tol: float | None = None,
                 hierarchy_kwargs: dict | None = None, **problem_overrides) -> ProblemInstance:
    """Build a proxy problem from a string such as ``poisson:32:1e-3,1,1``.

    Solver targets use a zero right-hand side with a random initial guess and an
    absolute tolerance; PCG targets a random right-hand side, zero initial guess
    and a relative tolerance.
    """
    label, A, _ = parse_problem(text, **problem_overrides)
    H = build_hierarchy(A, seed=seed, **(hierarchy_kwargs or {}))
    n = A.shape[0]
    if target == "solver":
        return ProblemInstance(label, H, zero_vector(n), random_vector(n, seed + 1), "solver",
                               1e-8 if tol is None else tol, "absolute")
    if target == "pcg":
        return ProblemInstance(label, H, random_vector(n, seed + 1), zero_vector(n), "pcg",
                               1e-6 if tol is None else tol, "relative")
    raise ValueError(f"unknown evaluation target {target!r}")


Fitness = tuple  # (cost_per_iter, rho)


@dataclass
class Individual:
    id: int
    tree: Node | None
    program: FlexProgram  # in grammar depth coordinates, remapped per hierarchy
    key: str
    generation: int = 0
    fitness: Fitness = (math.inf, DIVERGED_RHO)
    meta: dict = field(default_factory=dict)


def _solve_one(prog: FlexProgram, p: ProblemInstance, max_iter: int):
    H = p.hierarchy
    prog = validate_program(prog, H)
    with np.errstate(all="ignore"):
        try:
            if p.target == "solver":
                stats = run_solver(prog, H, p.b, p.x0, p.tol, max_iter, p.stop_mode)
                cost = cycle_work_units(prog, H)
            else:
                M = Preconditioner.amg(prog, H)
                _, stats = pcg(p.A, p.b, M, p.tol, max_iter, p.x0)
                cost = 1.0 + M.wu
                stats.diverged = stats.diverged or stats.breakdown
        except (ArithmeticError, FloatingPointError):
            return None, math.inf
    return stats, cost


def evaluate_program(prog: FlexProgram | Callable[[Hierarchy], FlexProgram],
                     problems: Sequence[ProblemInstance], max_iter: int = 100,
                     fitness_mode: str = "work_units") -> tuple[Fitness, dict]:
    """Fitness ``(mean cost per iteration, mean rho)`` of one program over the proxy set.

    ``prog`` is a program (remapped to each hierarchy) or a factory taking the hierarchy.
    Diverged runs get ``(inf, 10.0)``.
    """
    costs, rhos, Ns, wus = [], [], [], []
    converged = True
    for p in problems:
        q = prog(p.hierarchy) if callable(prog) else prog
        stats, cost = _solve_one(q, p, max_iter)
        if stats is None or stats.diverged or not math.isfinite(stats.rho):
            return (math.inf, DIVERGED_RHO), {"N": stats.N if stats else 0, "converged": False,
                                              "wu_total": math.inf, "diverged": True}
        if fitness_mode == "wall_clock":
            times = []
            for _ in range(3):
                t0 = time.perf_counter()
                _solve_one(q, p, max_iter)
                times.append(time.perf_counter() - t0)
            cost = float(np.median(times)) / max(stats.N, 1)
        costs.append(cost)
        rhos.append(stats.rho)
        Ns.append(stats.N)
        wus.append(stats.wu_total)
        converged &= stats.converged
    fit = (float(np.mean(costs)), float(np.mean(rhos)))
    return fit, {"N": float(np.mean(Ns)), "converged": bool(converged),
                 "wu_total": float(np.mean(wus)), "diverged": False}


# worker-side state, installed before the fork
_POOL_STATE: dict = {}


def _pool_eval(prog: FlexProgram):
    s = _POOL_STATE
    return evaluate_program(prog, s["problems"], s["max_iter"], s["fitness_mode"])


def evaluate_population(pop: Sequence[Individual], problems: Sequence[ProblemInstance],
                        params: EvoParams, cache: dict | None = None, pool=None) -> None:
    """Fill ``fitness`` and ``meta`` in place; programs already in ``cache`` are not re-run."""
    cache = {} if cache is None else cache
    todo = []
    for ind in pop:
        if ind.key not in cache and ind.key not in {t.key for t in todo}:
            todo.append(ind)
    if todo:
        if pool is not None:
            results = pool.map(_pool_eval, [t.program for t in todo], chunksize=1)
        else:
            results = [evaluate_program(t.program, problems, params.max_iter, params.fitness_mode)
                       for t in todo]
        for t, res in zip(todo, results):
            cache[t.key] = res
    for ind in pop:
        fit, meta = cache[ind.key]
        ind.fitness = fit
        ind.meta = dict(meta)


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def fast_nondominated_sort(F: np.ndarray) -> list[list[int]]:
    """Fronts of minimisation points ``F`` (n x m), each front in ascending index order."""
    F = np.asarray(F, dtype=np.float64)
    n = F.shape[0]
    if n == 0:
        return []
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while current.size:
        fronts.append(current.tolist())
        count = count - dom[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


def crowding_distance(F: np.ndarray) -> np.ndarray:
    """Crowding distance within one front; extremes get ``inf`` unless the objective is flat."""
    F = np.where(np.isinf(np.asarray(F, dtype=np.float64)), _INF_STANDIN, F)
    n, m = F.shape
    d = np.zeros(n)
    if n == 0:
        return d
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        lo, hi = F[order[0], k], F[order[-1], k]
        if hi == lo:
            continue
        d[order[0]] = d[order[-1]] = math.inf
        gaps = (F[order[2:], k] - F[order[:-2], k]) / (hi - lo)
        d[order[1:-1]] += gaps
    return d


def _select_from(pool: Sequence[Individual], idx: list[int], k: int) -> list[int]:
    F = np.array([pool[i].fitness for i in idx], dtype=np.float64).reshape(len(idx), 2)
    chosen: list[int] = []
    for front in fast_nondominated_sort(F):
        if len(chosen) + len(front) <= k:
            chosen += front
            if len(chosen) == k:
                break
            continue
        cd = crowding_distance(F[front])
        order = np.argsort(-cd, kind="stable")
        chosen += [front[i] for i in order[: k - len(chosen)]]
        break
    return [idx[i] for i in chosen]


def nsga2_select(parents: Sequence[Individual], offspring: Sequence[Individual],
                 mu: int) -> list[Individual]:
    """Survivor selection by non-domination rank, then crowding distance.

    Repeated programs (equal ``key``) only compete for the slots left over by
    distinct ones, so copies cannot crowd unique front members out.
    """
    pool = list(parents) + list(offspring)
    seen: set = set()
    unique, dups = [], []
    for i, ind in enumerate(pool):
        (dups if ind.key in seen else unique).append(i)
        seen.add(ind.key)
    chosen = _select_from(pool, unique, mu)
    if len(chosen) < mu and dups:
        chosen += _select_from(pool, dups, mu - len(chosen))
    return [pool[i] for i in chosen]


def _rank_and_crowding(pop: Sequence[Individual]) -> tuple[np.ndarray, np.ndarray]:
    F = np.array([ind.fitness for ind in pop], dtype=np.float64).reshape(len(pop), 2)
    rank = np.zeros(len(pop), dtype=np.int64)
    crowd = np.zeros(len(pop))
    for r, front in enumerate(fast_nondominated_sort(F)):
        rank[front] = r
        crowd[front] = crowding_distance(F[front])
    return rank, crowd


def hypervolume_2d(points: np.ndarray, ref: Sequence[float]) -> float:
    """Area dominated by ``points`` (minimisation) and bounded by ``ref``."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    P = P[np.all(P < np.asarray(ref), axis=1)]
    if P.size == 0:
        return 0.0
    P = P[np.lexsort((P[:, 1], P[:, 0]))]
    hv = 0.0
    best_y = ref[1]
    for x, y in P:
        if y < best_y:
            hv += (ref[0] - x) * (best_y - y)
            best_y = y
    return float(hv)


@dataclass
class EvolutionResult:
    """``front`` is the non-dominated set over every individual evaluated in the run."""

    population: list[Individual]
    front: list[Individual]
    generations: list[dict]
    records: list[dict]
    hv_ref: tuple[float, float]


def _record(ind: Individual) -> dict:
    return {"id": ind.id, "gen": ind.generation, "genotype": tree_key(ind.tree) if ind.tree else None,
            "program": ind.key, "cost_per_iter": ind.fitness[0], "rho": ind.fitness[1], **ind.meta}


def _front(pop: Sequence[Individual]) -> list[Individual]:
    if not pop:
        return []
    F = np.array([ind.fitness for ind in pop], dtype=np.float64)
    seen, out = set(), []
    for i in fast_nondominated_sort(F)[0]:
        if pop[i].key not in seen:
            seen.add(pop[i].key)
            out.append(pop[i])
    return sorted(out, key=lambda ind: (ind.fitness, ind.id))


def merge_fronts(fronts: Sequence[Sequence[Individual]]) -> list[Individual]:
    """Merge fronts of independent runs and keep the non-dominated, deduplicated set."""
    return _front([ind for f in fronts for ind in f])


def evolve(problems: Sequence[ProblemInstance], params: EvoParams,
           grammar: Grammar | None = None,
           on_generation: Callable[[dict], None] | None = None) -> EvolutionResult:
    """Grammar-guided (mu + lambda) evolution with NSGA-II survivor selection."""
    g = grammar or params.grammar()
    rng = np.random.Generator(np.random.PCG64(params.seed))
    cache: dict = {}
    records: list[dict] = []
    next_id = 0

    def make(tree, gen):
        nonlocal next_id
        prog = genotype_to_program(tree, g)
        ind = Individual(next_id, tree, prog, format_program(prog), gen)
        next_id += 1
        return ind

    pool = None
    if params.workers > 1:
        _POOL_STATE.update(problems=list(problems), max_iter=params.max_iter,
                           fitness_mode=params.fitness_mode)
        pool = multiprocessing.get_context("fork").Pool(params.workers)
    try:
        pop = [make(random_derivation(g, None, rng), 0) for _ in range(params.rho0)]
        evaluate_population(pop, problems, params, cache, pool)
        records += [_record(i) for i in pop]
        finite = [i.fitness[0] for i in pop if math.isfinite(i.fitness[0])]
        hv_ref = (1.1 * max(finite) if finite else 1.0, 1.0)
        archive = _front(pop)
        pop = nsga2_select(pop, [], params.mu)
        generations = [_summary(0, pop, archive, hv_ref, len(cache))]
        if on_generation:
            on_generation(generations[-1])
        for t in range(1, params.t_max + 1):
            rank, crowd = _rank_and_crowding(pop)

            def tournament():
                i, j = rng.integers(len(pop), size=2)
                if (rank[j], -crowd[j]) < (rank[i], -crowd[i]):
                    i = j
                return pop[int(i)]

            offspring: list[Individual] = []
            while len(offspring) < params.lam:
                if rng.random() < params.pc:
                    a, b = crossover(tournament().tree, tournament().tree, g, rng)
                    offspring.append(make(a, t))
                    if len(offspring) < params.lam:
                        offspring.append(make(b, t))
                else:
                    offspring.append(make(mutate(tournament().tree, g, rng), t))
            evaluate_population(offspring, problems, params, cache, pool)
            records += [_record(i) for i in offspring]
            archive = _front(archive + offspring)
            pop = nsga2_select(pop, offspring, params.mu)
            generations.append(_summary(t, pop, archive, hv_ref, len(cache)))
            if on_generation:
                on_generation(generations[-1])
    finally:
        if pool is not None:
            pool.close()
            pool.join()
            _POOL_STATE.clear()
    return EvolutionResult(pop, archive, generations, records, hv_ref)


def _hv(front: Sequence[Individual], ref) -> float:
    return hypervolume_2d(np.array([i.fitness for i in front], dtype=np.float64), ref)


def _summary(t: int, pop: Sequence[Individual], archive: Sequence[Individual], ref,
             evaluated: int) -> dict:
    front = _front(pop)
    return {"gen": t, "front_size": len(front), "archive_size": len(archive),
            "hypervolume": _hv(archive, ref), "population_hypervolume": _hv(front, ref),
            "best_rho": float(min(i.fitness[1] for i in pop)),
            "best_cost": float(min(i.fitness[0] for i in pop)), "evaluated": evaluated}


def write_log(path, result: EvolutionResult) -> None:
    """JSONL: one line per evaluated individual, then one summary line per generation."""
    with open(path, "w") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for gen in result.generations:
            fh.write(json.dumps({"summary": gen}, sort_keys=True) + "\n")


def write_front_csv(path, front: Sequence[Individual]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "cost_per_iter", "rho", "N", "wu_total", "converged"])
        for ind in front:
            w.writerow([ind.id, repr(ind.fitness[0]), repr(ind.fitness[1]), ind.meta.get("N"),
                        repr(ind.meta.get("wu_total")), ind.meta.get("converged")])


def export_individuals(outdir, individuals: Sequence[Individual]) -> list[Path]:
    """One ``.cycle`` (DSL) and one ``.dot`` file per individual."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ind in individuals:
        stem = outdir / f"individual_{ind.id}"
        stem.with_suffix(".cycle").write_text(ind.key)
        stem.with_suffix(".dot").write_text(program_to_dot(ind.program, f"individual_{ind.id}"))
        paths.append(stem.with_suffix(".cycle"))
    return paths
