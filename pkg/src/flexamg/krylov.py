"""Preconditioned conjugate gradients, reference V-cycle catalog and the hybrid
diagonal-to-multigrid switching solver."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .cycle import (FlexProgram, SolveStats, convergence_rate, cycle_work_units, execute_cycle,
                    validate_program, vcycle_program)
from .hierarchy import Hierarchy, build_hierarchy
from .smoothers import SmootherSpec
from .sparse import DimensionError

__all__ = [
    "Preconditioner", "pcg", "ReferenceSolver", "REFERENCE_SOLVERS", "reference_solver_program",
    "resolve_reference", "HybridConfig", "HybridResult", "hybrid_solve",
]

log = logging.getLogger(__name__)


@dataclass
class Preconditioner:
    """``kind`` is ``none``, ``diagonal`` or ``amg``; AMG applies one cycle from a zero guess."""

    kind: str = "none"
    program: FlexProgram | None = None
    hierarchy: Hierarchy | None = None
    diag: np.ndarray | None = None
    wu: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.kind not in ("none", "diagonal", "amg"):
            raise ValueError(f"unknown preconditioner kind {self.kind!r}")
        if self.kind == "amg":
            if self.program is None or self.hierarchy is None:
                raise ValueError("AMG preconditioner needs a program and a hierarchy")
            self.program = validate_program(self.program, self.hierarchy)
            self.wu = cycle_work_units(self.program, self.hierarchy)

    @classmethod
    def diagonal_of(cls, A: sp.csr_matrix) -> "Preconditioner":
        d = A.diagonal()
        if np.any(d == 0):
            raise ZeroDivisionError("diagonal preconditioner needs a nonzero diagonal")
        return cls("diagonal", diag=d)

    @classmethod
    def amg(cls, program: FlexProgram, hierarchy: Hierarchy) -> "Preconditioner":
        return cls("amg", program, hierarchy)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return r.copy()
        if self.kind == "diagonal":
            return r / self.diag
        return execute_cycle(self.program, self.hierarchy, np.zeros_like(r), r)


Monitor = Callable[[int, list], bool]


def pcg(A: sp.csr_matrix, b: np.ndarray, precond: Preconditioner | None = None,
        tol_rel: float = 1e-6, max_iter: int = 1000, x0: np.ndarray | None = None,
        monitor: Monitor | None = None) -> tuple[np.ndarray, SolveStats]:
    """Preconditioned CG; returns ``(x, stats)``.

    ``monitor(k, history)`` is called after every iteration and may return True
    to stop early.  A vanishing ``p^T A p`` or ``r^T z`` (relative to the vector
    norms, 1e-14) stops the iteration with ``stats.breakdown`` set.
    """
    if b.shape[0] != A.shape[0]:
        raise DimensionError(f"pcg: A is {A.shape}, b has length {b.shape[0]}")
    M = precond or Preconditioner()
    x = np.zeros(A.shape[0]) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A @ x
    r0 = float(np.linalg.norm(r))
    history = [r0]
    target = tol_rel * r0
    per_iter = 1.0 + M.wu
    if r0 == 0.0:
        return x, SolveStats(0, 0.0, 0.0, True, history=history)
    z = M(r)
    rz = float(r @ z)
    p = z.copy()
    k = 0
    converged = breakdown = False
    rn = r0
    if rz <= 1e-14 * r0 * np.linalg.norm(z):
        breakdown = True
    while not breakdown and k < max_iter:
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 1e-14 * np.linalg.norm(p) * np.linalg.norm(Ap):
            breakdown = True
            break
        a = rz / pAp
        x += a * p
        r -= a * Ap
        k += 1
        rn = float(np.linalg.norm(r))
        history.append(rn)
        if rn <= target:
            converged = True
            break
        if not math.isfinite(rn) or (monitor is not None and monitor(k, history)):
            break
        z = M(r)
        rz_new = float(r @ z)
        if rz_new <= 1e-14 * rn * np.linalg.norm(z):
            breakdown = True
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    if breakdown:
        log.info("pcg breakdown after %d iterations", k)
    stats = SolveStats(k, convergence_rate(r0, rn, k), k * per_iter, converged,
                       diverged=not math.isfinite(rn), history=history, breakdown=breakdown)
    return x, stats


@dataclass(frozen=True)
class ReferenceSolver:
    name: str
    ordering: str
    pre: str
    nu1: int
    post: str
    nu2: int
    variant: str = "l1"
    omega_i: float = 1.0
    omega_o: float = 1.0

    def specs(self) -> tuple[list[SmootherSpec], list[SmootherSpec]]:
        def spec(kind):
            return SmootherSpec(kind, self.variant, self.ordering,
                                omega_i=self.omega_i, omega_o=self.omega_o)
        return [spec(self.pre)] * self.nu1, [spec(self.post)] * self.nu2


REFERENCE_SOLVERS = {
    s.name: s for s in (
        ReferenceSolver("default", "lex", "GSF", 1, "GSB", 1),
        ReferenceSolver("tuned-1", "CF", "GSF", 1, "GSF", 1),
        ReferenceSolver("tuned-2", "CF", "GSF", 1, "GSF", 1, "weighted", 1.1, 0.9),
        ReferenceSolver("tuned-3", "lex", "GSF", 1, "GSF", 1),
        ReferenceSolver("tuned-4", "CF", "Jacobi", 1, "Jacobi", 1),
        ReferenceSolver("tuned-5", "lex", "GSF", 1, "GSF", 1, "weighted", 1.1, 0.9),
        ReferenceSolver("tuned-6", "lex", "GSF", 2, "GSB", 1),
        # fastest hand-tuned preconditioner for the time-step systems
        ReferenceSolver("tuned-pcg", "lex", "Jacobi", 1, "Jacobi", 1),
    )
}


def resolve_reference(name: str) -> ReferenceSolver:
    key = name.strip().lower().replace(" ", "-").replace("_", "-")
    if key.startswith("tuned") and key[5:6].isdigit():
        key = "tuned-" + key[5:]
    try:
        return REFERENCE_SOLVERS[key]
    except KeyError:
        raise KeyError(f"unknown reference solver {name!r}; known: "
                       f"{', '.join(REFERENCE_SOLVERS)}") from None


def reference_solver_program(name: str, hierarchy: Hierarchy | int) -> FlexProgram:
    """Full recursive V-cycle for a catalog entry, written as a flexible program."""
    ref = resolve_reference(name)
    L = hierarchy.L if isinstance(hierarchy, Hierarchy) else int(hierarchy)
    pre, post = ref.specs()
    return vcycle_program(L, 0, pre, post)


@dataclass(frozen=True)
class HybridConfig:
    """``threshold`` in [0, 1]; 1 disables switching.  The rate is checked every ``window`` iterations."""

    threshold: float = 0.65
    window: int = 5

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class HybridResult:
    x: np.ndarray
    stats: SolveStats
    switched: bool
    switch_iter: int | None
    diag_iters: int
    amg_iters: int
    setup_seconds: float = 0.0


ProgramSource = Union[str, FlexProgram, Callable[[Hierarchy], FlexProgram]]


def _program_for(source: ProgramSource, hier: Hierarchy) -> FlexProgram:
    if isinstance(source, str):
        return reference_solver_program(source, hier)
    if isinstance(source, FlexProgram):
        return validate_program(source, hier)
    return source(hier)


def hybrid_solve(A: sp.csr_matrix, b: np.ndarray, amg_program: ProgramSource = "default",
                 cfg: HybridConfig = HybridConfig(), tol_rel: float = 1e-6,
                 max_iter: int = 1000, x0: np.ndarray | None = None,
                 hierarchy_kwargs: dict | None = None) -> HybridResult:
    """Diagonal PCG that escalates to AMG preconditioning when it converges slowly.

    Every ``cfg.window`` iterations the windowed rate
    ``(||r_k|| / ||r_{k-w}||)^(1/w)`` is compared with the threshold; on the
    first exceedance the hierarchy is built and CG restarts from the current
    iterate with the AMG preconditioner.
    """
    w = cfg.window

    def slow(k, hist):
        if cfg.threshold >= 1.0 or k % w:
            return False
        return (hist[k] / hist[k - w]) ** (1.0 / w) > cfg.threshold

    x, s1 = pcg(A, b, Preconditioner.diagonal_of(A), tol_rel, max_iter, x0, monitor=slow)
    r0 = s1.history[0]
    if s1.converged or s1.N >= max_iter or s1.breakdown or s1.diverged:
        return HybridResult(x, s1, False, None, s1.N, 0)
    t0 = time.perf_counter()
    hier = build_hierarchy(A, **(hierarchy_kwargs or {}))
    setup = time.perf_counter() - t0
    log.info("hybrid switch to AMG after %d diagonal iterations (setup %.3fs)", s1.N, setup)
    prog = _program_for(amg_program, hier)
    # the restarted solve must still reach tol_rel relative to the original residual
    rem_tol = tol_rel * r0 / max(s1.history[-1], 1e-300)
    x, s2 = pcg(A, b, Preconditioner.amg(prog, hier), rem_tol, max_iter - s1.N, x)
    N = s1.N + s2.N
    rn = s2.history[-1]
    history = s1.history + s2.history[1:]
    stats = SolveStats(N, convergence_rate(r0, rn, N), s1.wu_total + s2.wu_total, s2.converged,
                       s2.diverged, history, s2.breakdown)
    return HybridResult(x, stats, True, s1.N, s1.N, s2.N, setup)
