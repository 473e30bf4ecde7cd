"""Jacobi and hybrid Gauss-Seidel smoothers with weighted and l1 variants.

Every smoother is applied in correction form ``x <- x + B^{-1} (b - A x)``.
Hybrid smoothers couple rows of the same partition block Gauss-Seidel style
and treat rows of other blocks with values frozen at the start of the sweep.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .sparse import DENSE_CAP, BlockPartition, DimensionError

__all__ = [
    "KINDS", "VARIANTS", "ORDERINGS", "SmootherSpec", "ZeroDiagonalError", "SmootherContext",
    "compute_l1_diagonal", "apply_smoother", "relax", "smoother_error_operator", "sweep_order",
]

KINDS = ("Jacobi", "GSF", "GSB", "GSS")
VARIANTS = ("weighted", "l1")
ORDERINGS = ("lex", "CF")


class ZeroDiagonalError(ArithmeticError):
    def __init__(self, row: int):
        super().__init__(f"smoother diagonal is zero in row {row}")
        self.row = row


@dataclass(frozen=True)
class SmootherSpec:
    """One relaxation sweep.

    ``omega`` is the Jacobi weight, ``omega_i``/``omega_o`` the inner/outer hybrid
    Gauss-Seidel weights.  The l1 variant ignores all three.
    """

    kind: str = "GSF"
    variant: str = "l1"
    ordering: str = "lex"
    omega: float = 1.0
    omega_i: float = 1.0
    omega_o: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown smoother kind {self.kind!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown smoother variant {self.variant!r}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}")

    @property
    def sweeps(self) -> int:
        """Number of elementary sweeps (GSS is a forward plus a backward sweep)."""
        return 2 if self.kind == "GSS" else 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SmootherSpec":
        return cls(**json.loads(text))


def compute_l1_diagonal(A: sp.csr_matrix, partition: BlockPartition) -> np.ndarray:
    """Per-row sum of ``|a_ij|`` over columns outside the row's own block."""
    if partition.nrows != A.shape[0]:
        raise DimensionError(f"partition covers {partition.nrows} rows, matrix has {A.shape[0]}")
    ids = partition.block_ids()
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    off = ids[rows] != ids[A.indices]
    return np.bincount(rows[off], weights=np.abs(A.data[off]), minlength=A.shape[0])


def sweep_order(n: int, backward: bool, cf_marks: np.ndarray | None = None,
                cf_reverse: bool = False) -> np.ndarray:
    """Row visiting order.  With ``cf_marks`` all C rows come before all F rows.

    Blocks never see each other's in-sweep updates, so one global C-then-F order
    realises the per-block C-then-F sub-sweeps.
    """
    rows = np.arange(n, dtype=np.int64)
    if backward:
        rows = rows[::-1].copy()
    if cf_marks is None:
        return rows
    is_c = cf_marks[rows].astype(bool)
    first, second = (rows[~is_c], rows[is_c]) if cf_reverse else (rows[is_c], rows[~is_c])
    return np.concatenate([first, second])


@numba.njit(cache=True)
def _sweep(indptr, indices, data, x, b, order, lo, hi, dmod, couple, omega_o):
    n = x.shape[0]
    delta = np.zeros(n)
    for t in range(n):
        i = order[t]
        s = b[i]
        l = lo[i]
        h = hi[i]
        c = couple[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            a = data[k]
            s -= a * x[j]
            if c and j != i and j >= l and j < h:
                s -= a * delta[j]
        delta[i] = s / dmod[i]
    out = np.empty(n)
    for i in range(n):
        out[i] = x[i] + omega_o * delta[i]
    return out


@dataclass
class SmootherContext:
    """Per-matrix data shared by all sweeps on one level."""

    A: sp.csr_matrix
    partition: BlockPartition
    l1: np.ndarray
    cf_marks: np.ndarray | None = None
    cf_reverse: bool = False
    diag: np.ndarray = field(init=False)
    lo: np.ndarray = field(init=False)
    hi: np.ndarray = field(init=False)
    _orders: dict = field(init=False, default_factory=dict)
    _couple: dict = field(init=False, default_factory=dict)

    def __post_init__(self):
        self.diag = self.A.diagonal()
        b = np.asarray(self.partition.boundaries, dtype=np.int64)
        ids = self.partition.block_ids()
        self.lo = b[ids]
        self.hi = b[ids + 1]

    @classmethod
    def build(cls, A, partition, l1diag=None, cf_marks=None, cf_reverse=False):
        if l1diag is None:
            l1diag = compute_l1_diagonal(A, partition)
        return cls(A, partition, np.asarray(l1diag, dtype=np.float64), cf_marks, cf_reverse)

    def order(self, backward: bool, ordering: str) -> np.ndarray:
        key = (backward, ordering)
        if key not in self._orders:
            if ordering == "CF" and self.cf_marks is None:
                raise ValueError("C-F ordering requested but no C/F marks are available")
            marks = self.cf_marks if ordering == "CF" else None
            self._orders[key] = sweep_order(self.A.shape[0], backward, marks, self.cf_reverse)
        return self._orders[key]

    def couple(self, kind: str, ordering: str) -> np.ndarray:
        """Rows that see in-sweep updates of earlier rows in the same block."""
        key = (kind == "Jacobi", ordering)
        if key not in self._couple:
            n = self.A.shape[0]
            if kind != "Jacobi":
                mask = np.ones(n, dtype=np.bool_)
            elif ordering == "CF":
                c = self.cf_marks.astype(bool)
                mask = c if self.cf_reverse else ~c
            else:
                mask = np.zeros(n, dtype=np.bool_)
            self._couple[key] = mask
        return self._couple[key]

    def modified_diagonal(self, spec: SmootherSpec) -> tuple[np.ndarray, float]:
        if spec.variant == "l1":
            d, outer = self.diag + self.l1, 1.0
        elif spec.kind == "Jacobi":
            with np.errstate(divide="ignore"):
                d, outer = self.diag * (1.0 / spec.omega), 1.0
        else:
            with np.errstate(divide="ignore"):
                d, outer = self.diag * (1.0 / spec.omega_i), spec.omega_o
        zero = np.flatnonzero(d == 0.0)
        if zero.size:
            raise ZeroDiagonalError(int(zero[0]))
        return d, outer


def _one_sweep(ctx: SmootherContext, x, b, spec: SmootherSpec, backward: bool):
    d, outer = ctx.modified_diagonal(spec)
    A = ctx.A
    return _sweep(A.indptr, A.indices, A.data, x, b, ctx.order(backward, spec.ordering),
                  ctx.lo, ctx.hi, d, ctx.couple(spec.kind, spec.ordering), outer)


def relax(ctx: SmootherContext, x: np.ndarray, b: np.ndarray, spec: SmootherSpec) -> np.ndarray:
    """One smoother application on a prepared context; returns a new vector."""
    if spec.kind == "GSS":
        x = _one_sweep(ctx, x, b, spec, backward=False)
        return _one_sweep(ctx, x, b, spec, backward=True)
    return _one_sweep(ctx, x, b, spec, backward=spec.kind == "GSB")


def apply_smoother(A, x, b, spec: SmootherSpec, partition: BlockPartition,
                   l1diag=None, cf_marks=None, cf_reverse: bool = False) -> np.ndarray:
    if x.shape[0] != A.shape[0] or b.shape[0] != A.shape[0]:
        raise DimensionError(f"apply_smoother: A is {A.shape}, x {x.shape}, b {b.shape}")
    if spec.variant == "l1" and l1diag is None:
        raise ValueError("l1 smoother needs the l1 diagonal")
    ctx = SmootherContext.build(A, partition, l1diag, cf_marks, cf_reverse)
    return relax(ctx, np.asarray(x, dtype=np.float64), np.asarray(b, dtype=np.float64), spec)


def smoother_error_operator(A, spec: SmootherSpec, partition: BlockPartition,
                            l1diag=None, cf_marks=None, cf_reverse: bool = False) -> np.ndarray:
    """Dense ``T = I - B^{-1} A`` assembled column by column from unit errors."""
    n = A.shape[0]
    if n > DENSE_CAP:
        raise ValueError(f"{n} rows exceeds the dense cap {DENSE_CAP}")
    ctx = SmootherContext.build(A, partition, l1diag, cf_marks, cf_reverse)
    zero = np.zeros(n)
    T = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        T[:, j] = relax(ctx, e, zero, spec)
    return T
