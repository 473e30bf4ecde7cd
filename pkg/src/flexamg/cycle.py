"""Flexible multigrid cycles: representation, validation, execution and analysis.

A :class:`FlexProgram` is a flat list of level-tagged instructions over the top
levels ``l_top .. l_std`` of a hierarchy.  Below ``l_std`` a standard V(1,1)
cycle (l1 forward Gauss-Seidel pre, l1 backward post, dense LU on level 0)
takes over.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .hierarchy import Hierarchy
from .smoothers import SmootherSpec, relax
from .sparse import DENSE_CAP, dense_lu_solve

__all__ = [
    "Relax", "Restrict", "CoarseCorrection", "StdVSolve", "Instruction", "FlexProgram",
    "ProgramError", "validate_program", "remap_program", "execute_cycle", "standard_v_cycle",
    "vcycle_program", "cycle_work_units", "assemble_iteration_matrix", "spectral_radius",
    "power_iteration", "iteration_eigenvalues", "convergence_rate", "SolveStats",
    "run_solver", "DEFAULT_PRE", "DEFAULT_POST", "DEPTH_CAP", "DIVERGED_RHO",
]

log = logging.getLogger(__name__)

DEFAULT_PRE = SmootherSpec("GSF", "l1", "lex")
DEFAULT_POST = SmootherSpec("GSB", "l1", "lex")
DEPTH_CAP = 256
#: rho reported to the fitness function for diverged runs
DIVERGED_RHO = 10.0


@dataclass(frozen=True)
class Relax:
    level: int
    spec: SmootherSpec


@dataclass(frozen=True)
class Restrict:
    level: int  # level the residual is restricted from


@dataclass(frozen=True)
class CoarseCorrection:
    level: int  # level receiving the correction
    alpha: float = 1.0


@dataclass(frozen=True)
class StdVSolve:
    level: int


Instruction = Union[Relax, Restrict, CoarseCorrection, StdVSolve]


@dataclass(frozen=True)
class FlexProgram:
    instrs: tuple
    l_top: int
    l_std: int

    def __post_init__(self):
        object.__setattr__(self, "instrs", tuple(self.instrs))

    def __len__(self):
        return len(self.instrs)


class ProgramError(ValueError):
    def __init__(self, index: int, message: str):
        super().__init__(f"instruction {index}: {message}")
        self.index = index


def validate_program(prog: FlexProgram, hierarchy: Hierarchy | None = None,
                     depth_cap: int = DEPTH_CAP) -> FlexProgram:
    """Check structural invariants; returns the program remapped to ``hierarchy``.

    Raises :class:`ProgramError` naming the offending instruction index.
    """
    if hierarchy is not None and prog.l_top != hierarchy.L:
        prog = remap_program(prog, hierarchy.L)
    n = len(prog.instrs)
    if n > depth_cap:
        raise ProgramError(depth_cap, f"program has {n} instructions, cap is {depth_cap}")
    if not 0 <= prog.l_std <= prog.l_top:
        raise ProgramError(-1, f"l_std={prog.l_std} outside [0, l_top={prog.l_top}]")
    if hierarchy is not None and prog.l_top > hierarchy.L:
        raise ProgramError(-1, f"l_top={prog.l_top} beyond hierarchy depth {hierarchy.L}")
    cur = prog.l_top
    solved = prog.l_top != prog.l_std
    depth = 0
    for k, ins in enumerate(prog.instrs):
        if ins.level < prog.l_std or ins.level > prog.l_top:
            raise ProgramError(k, f"level {ins.level} out of range [{prog.l_std}, {prog.l_top}]")
        if isinstance(ins, Relax):
            if ins.level != cur:
                raise ProgramError(k, f"relax on level {ins.level} while at level {cur}")
            if cur == prog.l_std:
                raise ProgramError(k, "only vsolve may run on the standard-cycle level")
        elif isinstance(ins, Restrict):
            if ins.level != cur:
                raise ProgramError(k, f"restrict from level {ins.level} while at level {cur}")
            if cur - 1 < prog.l_std:
                raise ProgramError(k, "restrict below the standard-cycle level")
            cur -= 1
            depth += 1
            if cur == prog.l_std:
                solved = False
        elif isinstance(ins, StdVSolve):
            if ins.level != prog.l_std or cur != prog.l_std:
                raise ProgramError(k, f"vsolve misplaced: level {ins.level}, at {cur}, "
                                      f"l_std={prog.l_std}")
            if solved:
                raise ProgramError(k, "repeated vsolve on one visit")
            solved = True
        elif isinstance(ins, CoarseCorrection):
            if ins.level != cur + 1 or depth == 0:
                raise ProgramError(k, f"unbalanced coarse correction to level {ins.level} "
                                      f"from level {cur}")
            if cur == prog.l_std and not solved:
                raise ProgramError(k, "coarse correction before vsolve")
            if not math.isfinite(ins.alpha):
                raise ProgramError(k, "non-finite alpha")
            cur += 1
            depth -= 1
        else:
            raise ProgramError(k, f"unknown instruction {ins!r}")
    if cur != prog.l_top or depth != 0:
        raise ProgramError(n, f"unbalanced: program ends on level {cur}, not {prog.l_top}")
    if not solved:
        raise ProgramError(n, "standard-cycle level never solved")
    return prog


def remap_program(prog: FlexProgram, L: int) -> FlexProgram:
    """Shift a program to a hierarchy with top level ``L``.

    The flexible part keeps its shape relative to the finest level.  When the
    new hierarchy is too shallow, everything below the new standard level is
    collapsed into one ``StdVSolve`` (a direct solve when that level is 0).
    """
    delta = L - prog.l_top
    new_std = max(0, prog.l_std + delta)
    if new_std == L:
        return FlexProgram((StdVSolve(L),), L, L)
    out = []
    skip_until = None
    for ins in prog.instrs:
        lvl = ins.level + delta
        if skip_until is not None:
            if isinstance(ins, CoarseCorrection) and lvl == skip_until:
                skip_until = None
                out.append(replace(ins, level=lvl))
            continue
        if isinstance(ins, Restrict) and lvl - 1 == new_std:
            out.append(Restrict(lvl))
            out.append(StdVSolve(new_std))
            skip_until = lvl
            continue
        out.append(replace(ins, level=lvl))
    return FlexProgram(tuple(out), L, new_std)


def _restrict(hier: Hierarchy, l: int, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    lev = hier.levels[l]
    return lev.R @ (b - lev.A @ x)


def _correct(hier: Hierarchy, l: int, x: np.ndarray, xc: np.ndarray, alpha: float) -> np.ndarray:
    return x + alpha * (hier.levels[l].P @ xc)


def standard_v_cycle(hier: Hierarchy, level: int, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Recursive V(1,1) from ``level`` down to the dense solve on level 0."""
    if level == 0:
        return x + dense_lu_solve(hier.coarse_lu, b - hier.levels[0].A @ x)
    ctx = hier.levels[level].smoothing
    x = relax(ctx, x, b, DEFAULT_PRE)
    bc = _restrict(hier, level, x, b)
    xc = standard_v_cycle(hier, level - 1, np.zeros(bc.shape[0]), bc)
    x = _correct(hier, level, x, xc, 1.0)
    return relax(ctx, x, b, DEFAULT_POST)


def execute_cycle(prog: FlexProgram, hier: Hierarchy, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply one flexible cycle; ``prog`` must already be validated for ``hier``."""
    xs: list = [None] * (hier.L + 1)
    bs: list = [None] * (hier.L + 1)
    xs[prog.l_top] = np.asarray(x, dtype=np.float64)
    bs[prog.l_top] = np.asarray(b, dtype=np.float64)
    for ins in prog.instrs:
        l = ins.level
        if isinstance(ins, Relax):
            xs[l] = relax(hier.levels[l].smoothing, xs[l], bs[l], ins.spec)
        elif isinstance(ins, Restrict):
            bs[l - 1] = _restrict(hier, l, xs[l], bs[l])
            xs[l - 1] = np.zeros(bs[l - 1].shape[0])
        elif isinstance(ins, CoarseCorrection):
            xs[l] = _correct(hier, l, xs[l], xs[l - 1], ins.alpha)
        else:
            xs[l] = standard_v_cycle(hier, l, xs[l], bs[l])
    out = xs[prog.l_top]
    return out.copy() if out is x else out


def vcycle_program(L: int, l_std: int = 0, pre: Sequence[SmootherSpec] = (DEFAULT_PRE,),
                   post: Sequence[SmootherSpec] = (DEFAULT_POST,)) -> FlexProgram:
    """Recursive V-cycle written out as a flexible program over ``L .. l_std``."""
    if l_std == L:
        return FlexProgram((StdVSolve(L),), L, L)
    down, up = [], []
    for l in range(L, l_std, -1):
        down += [Relax(l, s) for s in pre] + [Restrict(l)]
        up = [CoarseCorrection(l, 1.0)] + [Relax(l, s) for s in post] + up
    return FlexProgram(tuple(down + [StdVSolve(l_std)] + up), L, l_std)


def _nnz_list(hier) -> list:
    return hier.level_nnz() if isinstance(hier, Hierarchy) else list(hier)


def cycle_work_units(prog: FlexProgram, hier, transfer_costs: bool = False) -> float:
    """Cost of one cycle in fine-grid operator applications.

    ``hier`` is a :class:`Hierarchy` or a per-level nnz sequence indexed by level.
    One sweep on level ``l`` costs ``nnz(A_l) / nnz(A_top)``; the embedded
    V-cycle does two sweeps on each level ``l_std .. 1``.
    """
    nnz = _nnz_list(hier)
    top = float(nnz[prog.l_top])
    ratio = [v / top for v in nnz]
    p_ratio = None
    if transfer_costs:
        if not isinstance(hier, Hierarchy):
            raise ValueError("transfer costs need a hierarchy")
        p_ratio = [0.0 if lev.P is None else lev.P.nnz / top for lev in hier.levels]
    wu = 0.0
    for ins in prog.instrs:
        if isinstance(ins, Relax):
            wu += ins.spec.sweeps * ratio[ins.level]
        elif isinstance(ins, StdVSolve):
            wu += sum(2.0 * ratio[m] for m in range(1, ins.level + 1))
            if p_ratio is not None:
                wu += sum(ratio[m] + 2.0 * p_ratio[m] for m in range(1, ins.level + 1))
        elif p_ratio is not None and isinstance(ins, Restrict):
            wu += ratio[ins.level] + p_ratio[ins.level]
        elif p_ratio is not None and isinstance(ins, CoarseCorrection):
            wu += p_ratio[ins.level]
    return wu


def assemble_iteration_matrix(prog: FlexProgram, hier: Hierarchy) -> np.ndarray:
    """Dense error propagator ``E`` with ``e' = E e`` (cycle applied with ``b = 0``)."""
    n = hier.levels[prog.l_top].nrows
    if n > DENSE_CAP:
        raise ValueError(f"{n} rows exceeds the dense cap {DENSE_CAP}")
    zero = np.zeros(n)
    E = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        E[:, j] = execute_cycle(prog, hier, e, zero)
    return E


@dataclass(frozen=True)
class PowerResult:
    rho: float
    iterations: int
    converged: bool


class ApproximateSpectralRadius(RuntimeWarning):
    pass


def power_iteration(E: np.ndarray, seed: int = 0, tol: float = 1e-8, max_iter: int = 10_000,
                    block: int = 2) -> PowerResult:
    """Block power iteration; the estimate is the largest Ritz value modulus.

    A block of two vectors lets complex-conjugate and ``+-lambda`` dominant
    pairs converge, which single-vector iteration cannot resolve.
    """
    E = np.asarray(E, dtype=np.float64)
    n = E.shape[0]
    if E.shape != (n, n):
        raise ValueError("spectral radius needs a square matrix")
    if n == 0 or not np.any(E):
        return PowerResult(0.0, 0, True)
    k = min(block, n)
    rng = np.random.Generator(np.random.PCG64(seed))
    Q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    est = np.inf
    for it in range(1, max_iter + 1):
        Z = E @ Q
        H = Q.T @ Z
        new = float(np.max(np.abs(np.linalg.eigvals(H))))
        Q, _ = np.linalg.qr(Z)
        if not np.all(np.isfinite(Q)):
            return PowerResult(new, it, False)
        if abs(new - est) <= tol * max(new, 1e-300):
            return PowerResult(new, it, True)
        est = new
    return PowerResult(est, max_iter, False)


def spectral_radius(E: np.ndarray, seed: int = 0, tol: float = 1e-8, max_iter: int = 10_000,
                    restarts: int = 3) -> float:
    """Largest eigenvalue modulus, maximised over ``restarts`` seeded power iterations."""
    results = [power_iteration(E, seed + r, tol, max_iter) for r in range(restarts)]
    if not all(r.converged for r in results):
        warnings.warn("power iteration did not stagnate; spectral radius is approximate",
                      ApproximateSpectralRadius, stacklevel=2)
    return max(r.rho for r in results)


def iteration_eigenvalues(E: np.ndarray) -> np.ndarray:
    """All eigenvalues (dense decomposition), for plotting."""
    if E.shape[0] > DENSE_CAP:
        raise ValueError(f"{E.shape[0]} rows exceeds the dense cap {DENSE_CAP}")
    return np.linalg.eigvals(E)


def convergence_rate(r0: float, rN: float, N: int) -> float:
    """``(||r_N|| / ||r_0||)^(1/N)``; 0 when no iteration was needed."""
    if N == 0:
        return 0.0
    return (rN / r0) ** (1.0 / N)


@dataclass
class SolveStats:
    N: int
    rho: float
    wu_total: float
    converged: bool
    diverged: bool = False
    history: list = field(default_factory=list)
    breakdown: bool = False

    @property
    def fitness_rho(self) -> float:
        return DIVERGED_RHO if self.diverged else self.rho


def run_solver(prog: FlexProgram, hier: Hierarchy, b: np.ndarray, x0: np.ndarray,
               tol: float = 1e-8, max_iter: int = 100, mode: str = "absolute",
               divergence_factor: float = 1e8) -> SolveStats:
    """Stationary iteration with the flexible cycle until the residual test passes."""
    if mode not in ("absolute", "relative"):
        raise ValueError(f"unknown stopping mode {mode!r}")
    prog = validate_program(prog, hier)
    A = hier.levels[-1].A
    wu = cycle_work_units(prog, hier)
    x = np.array(x0, dtype=np.float64)
    r0 = float(np.linalg.norm(b - A @ x))
    history = [r0]
    target = tol if mode == "absolute" else tol * r0
    if r0 <= target or r0 == 0.0:
        return SolveStats(0, 0.0, 0.0, True, history=history)
    rn = r0
    N = 0
    converged = diverged = False
    while N < max_iter:
        x = execute_cycle(prog, hier, x, b)
        N += 1
        rn = float(np.linalg.norm(b - A @ x))
        history.append(rn)
        if not math.isfinite(rn) or rn > divergence_factor * r0:
            diverged = True
            break
        if rn <= target:
            converged = True
            break
    rho = convergence_rate(r0, rn, N) if math.isfinite(rn) else math.inf
    return SolveStats(N, rho, N * wu, converged, diverged, history)
