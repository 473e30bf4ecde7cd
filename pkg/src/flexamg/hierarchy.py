"""Classical AMG setup: strength graph, PMIS splitting, direct interpolation, Galerkin RAP."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .smoothers import SmootherContext, compute_l1_diagonal
from .sparse import (DENSE_CAP, BlockPartition, LuFactors, as_csr, dense_lu_factor,
                     is_symmetric, transpose, triple_product)

__all__ = [
    "StrengthGraph", "Level", "Hierarchy", "SetupStallError", "strength_of_connection",
    "cf_split_pmis", "build_interpolation", "build_hierarchy", "pmis_weights",
]

log = logging.getLogger(__name__)

F_POINT, C_POINT = 0, 1


class SetupStallError(RuntimeError):
    pass


@dataclass(frozen=True)
class StrengthGraph:
    """``S[i, j] != 0`` iff row ``i`` strongly depends on column ``j``."""

    S: sp.csr_matrix
    theta: float

    def neighbors(self, i: int) -> np.ndarray:
        return self.S.indices[self.S.indptr[i]:self.S.indptr[i + 1]]


def strength_of_connection(A: sp.csr_matrix, theta: float = 0.25) -> StrengthGraph:
    """Classical negative-coupling strength: ``-a_ij >= theta * max_{k != i} (-a_ik)``."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    A = as_csr(A)
    n = A.shape[0]
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    neg = np.where((rows != A.indices) & (A.data < 0), -A.data, 0.0)
    row_max = np.zeros(n)
    np.maximum.at(row_max, rows, neg)
    strong = (neg > 0) & (neg >= theta * row_max[rows])
    S = sp.csr_matrix((np.ones(strong.sum()), (rows[strong], A.indices[strong])), shape=A.shape)
    S.sort_indices()
    return StrengthGraph(S, theta)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def pmis_weights(S: StrengthGraph, seed: int) -> np.ndarray:
    """Strong-transpose degree plus a seeded hash fraction in ``[0, 1)``."""
    n = S.S.shape[0]
    degree = np.bincount(S.S.indices, minlength=n).astype(np.float64)
    with np.errstate(over="ignore"):
        key = _splitmix64(np.uint64(seed) * np.uint64(0x100000001B3) + np.arange(n, dtype=np.uint64))
    # top 53 bits give an exactly representable fraction
    return degree + (key >> np.uint64(11)).astype(np.float64) / float(2 ** 53)


@numba.njit(cache=True)
def _pmis(n, s_ptr, s_idx, st_ptr, st_idx, w):
    UNDECIDED = -1
    state = np.full(n, UNDECIDED, dtype=np.int64)
    remaining = 0
    for i in range(n):
        if w[i] < 1.0:
            # nothing depends on i (or i is isolated): it can never serve as a C-point
            state[i] = 0
        else:
            remaining += 1
    new_c = np.empty(n, dtype=np.int64)
    while remaining > 0:
        m = 0
        for i in range(n):
            if state[i] != UNDECIDED:
                continue
            best = True
            for k in range(s_ptr[i], s_ptr[i + 1]):
                j = s_idx[k]
                if state[j] == UNDECIDED and w[j] >= w[i] and j != i:
                    best = False
                    break
            if best:
                for k in range(st_ptr[i], st_ptr[i + 1]):
                    j = st_idx[k]
                    if state[j] == UNDECIDED and w[j] >= w[i] and j != i:
                        best = False
                        break
            if best:
                new_c[m] = i
                m += 1
        for t in range(m):
            state[new_c[t]] = 1
            remaining -= 1
        for t in range(m):
            c = new_c[t]
            for k in range(st_ptr[c], st_ptr[c + 1]):
                j = st_idx[k]
                if state[j] == UNDECIDED:
                    state[j] = 0
                    remaining -= 1
    return state


def cf_split_pmis(S: StrengthGraph, seed: int = 0) -> np.ndarray:
    """PMIS C/F splitting; returns an int array with 1 for C-points and 0 for F-points."""
    n = S.S.shape[0]
    ST = S.S.T.tocsr()
    ST.sort_indices()
    w = pmis_weights(S, seed)
    return _pmis(n, S.S.indptr, S.S.indices, ST.indptr, ST.indices, w)


@numba.njit(cache=True)
def _direct_interp(n, a_ptr, a_idx, a_val, s_ptr, s_idx, marks, coarse_index):
    """Returns (rows, cols, vals, orphans); orphans flags F rows that have strong
    connections but no strong C neighbour."""
    cap = 0
    for i in range(n):
        cap += s_ptr[i + 1] - s_ptr[i] + 1
    rows = np.empty(cap, dtype=np.int64)
    cols = np.empty(cap, dtype=np.int64)
    vals = np.empty(cap)
    orphans = np.zeros(n, dtype=np.bool_)
    m = 0
    for i in range(n):
        if marks[i] == 1:
            rows[m] = i
            cols[m] = coarse_index[i]
            vals[m] = 1.0
            m += 1
            continue
        if s_ptr[i + 1] == s_ptr[i]:
            continue
        diag = 0.0
        neg_sum = 0.0
        for k in range(a_ptr[i], a_ptr[i + 1]):
            j = a_idx[k]
            if j == i:
                diag = a_val[k]
            elif a_val[k] < 0:
                neg_sum += a_val[k]
        c_sum = 0.0
        start = m
        kk = a_ptr[i]
        for k in range(s_ptr[i], s_ptr[i + 1]):
            j = s_idx[k]
            if marks[j] != 1:
                continue
            while a_idx[kk] != j:
                kk += 1
            c_sum += a_val[kk]
            rows[m] = i
            cols[m] = coarse_index[j]
            vals[m] = a_val[kk]
            m += 1
        if m == start:
            orphans[i] = True
            continue
        scale = -(neg_sum / c_sum) / diag
        for t in range(start, m):
            vals[t] *= scale
    return rows[:m], cols[:m], vals[:m], orphans


def build_interpolation(A: sp.csr_matrix, S: StrengthGraph, marks: np.ndarray):
    """Direct interpolation ``w_ij = -(a_ij * sum_{k!=i} a_ik^- / sum_{j in C_i^s} a_ij) / a_ii``.

    F-points with strong neighbours but no strong C neighbour are promoted to C
    and the operator is rebuilt.  Returns ``(P, marks)`` with the final marks.
    """
    A = as_csr(A)
    marks = np.array(marks, dtype=np.int64)
    n = A.shape[0]
    while True:
        coarse_index = np.cumsum(marks) - 1
        rows, cols, vals, orphans = _direct_interp(n, A.indptr, A.indices, A.data,
                                                   S.S.indptr, S.S.indices, marks, coarse_index)
        if not orphans.any():
            break
        log.info("promoting %d F-points without strong C neighbours to C", int(orphans.sum()))
        marks[orphans] = C_POINT
    nc = int(marks.sum())
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, nc))
    P.sort_indices()
    return P, marks


@dataclass
class Level:
    A: sp.csr_matrix
    partition: BlockPartition
    l1: np.ndarray
    P: sp.csr_matrix | None = None
    R: sp.csr_matrix | None = None
    cf_marks: np.ndarray | None = None
    smoothing: SmootherContext | None = None

    @property
    def nrows(self) -> int:
        return self.A.shape[0]

    @property
    def nnz(self) -> int:
        return self.A.nnz


@dataclass
class Hierarchy:
    """Levels indexed by level number: ``levels[0]`` is the coarsest, ``levels[-1]`` the finest."""

    levels: list[Level]
    coarse_lu: LuFactors
    theta: float
    seed: int

    @property
    def L(self) -> int:
        return len(self.levels) - 1

    def __getitem__(self, l: int) -> Level:
        return self.levels[l]

    def level_nnz(self) -> list[int]:
        return [lev.nnz for lev in self.levels]

    def operator_complexities(self) -> list[float]:
        top = self.levels[-1].nnz
        return [lev.nnz / top for lev in self.levels]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for lev in self.levels:
            for M in (lev.A, lev.P):
                if M is not None:
                    for arr in (M.indptr, M.indices, M.data):
                        h.update(np.ascontiguousarray(arr).tobytes())
            if lev.cf_marks is not None:
                h.update(lev.cf_marks.astype(np.int8).tobytes())
        return h.hexdigest()


def build_hierarchy(A: sp.csr_matrix, theta: float = 0.25, coarse_size_max: int = 16,
                    partition_blocks: int = 8, seed: int = 0, check_symmetry: bool = False,
                    cf_reverse: bool = False) -> Hierarchy:
    A = as_csr(A)
    if check_symmetry and not is_symmetric(A):
        raise ValueError("build_hierarchy expects a symmetric matrix")
    fine_first = []
    while True:
        n = A.shape[0]
        lev = Level(A, BlockPartition.uniform(n, partition_blocks), np.empty(0))
        fine_first.append(lev)
        if n <= coarse_size_max:
            break
        S = strength_of_connection(A, theta)
        marks = cf_split_pmis(S, seed)
        P, marks = build_interpolation(A, S, marks)
        nc = P.shape[1]
        if nc == 0 or nc > 0.95 * n:
            log.info("coarsening stalled at %d rows (next level %d)", n, nc)
            if n > DENSE_CAP:
                raise SetupStallError(
                    f"coarsening stalled at {n} rows, above the dense cap {DENSE_CAP}; "
                    "try a larger theta or a larger dense cap")
            break
        lev.P = P
        lev.R = transpose(P)
        lev.cf_marks = marks
        A = triple_product(lev.R, A, P)
    levels = fine_first[::-1]
    for lev in levels:
        lev.l1 = compute_l1_diagonal(lev.A, lev.partition)
        lev.smoothing = SmootherContext(lev.A, lev.partition, lev.l1, lev.cf_marks, cf_reverse)
    coarse = levels[0].A
    if coarse.shape[0] > DENSE_CAP:
        raise SetupStallError(f"coarsest level has {coarse.shape[0]} rows, above the dense cap")
    return Hierarchy(levels, dense_lu_factor(coarse.toarray()), theta, seed)
