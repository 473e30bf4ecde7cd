"""Sparse and small dense linear algebra primitives.

Sparse operators are plain ``scipy.sparse.csr_matrix`` objects kept in
canonical form (sorted column indices, no duplicates).  The helpers here add
the dimension checks and canonicalisation the rest of the package relies on.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

__all__ = [
    "DimensionError", "SingularMatrixError", "BlockPartition", "LuFactors",
    "as_csr", "check_csr", "is_symmetric", "spmv", "residual", "transpose",
    "matmat", "triple_product", "dense_lu_factor", "dense_lu_solve",
    "norm2", "dot", "axpy", "read_matrix_market", "write_matrix_market",
    "DENSE_CAP",
]

#: Largest number of rows allowed for dense work (coarse LU, iteration matrices).
DENSE_CAP = 512

_DROP_TOL = 1e-300


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class SingularMatrixError(ArithmeticError):
    """Raised by :func:`dense_lu_factor` when a pivot is numerically zero."""

    def __init__(self, row: int, pivot: float):
        super().__init__(f"matrix is singular to working precision at pivot row {row} "
                         f"(|pivot| = {pivot:.3e})")
        self.row = row


def as_csr(A) -> sp.csr_matrix:
    """Return ``A`` as a canonical float64 CSR matrix (sorted, deduplicated)."""
    A = sp.csr_matrix(A, dtype=np.float64, copy=True)
    A.sum_duplicates()
    A.sort_indices()
    return A


def check_csr(A: sp.csr_matrix, *, operator: bool = True) -> None:
    """Validate CSR invariants; raise ``ValueError`` on the first violation."""
    indptr, indices = A.indptr, A.indices
    n = A.shape[0]
    if len(indptr) != n + 1 or indptr[0] != 0 or np.any(np.diff(indptr) < 0):
        raise ValueError("row_ptr must be non-decreasing and start at 0")
    if indptr[-1] != len(indices) or len(indices) != len(A.data):
        raise ValueError("row_ptr[nrows] must equal len(col_idx) == len(values)")
    for i in range(n):
        cols = indices[indptr[i]:indptr[i + 1]]
        if np.any(np.diff(cols) <= 0):
            raise ValueError(f"row {i}: column indices not strictly increasing")
        if operator and not np.any(cols == i):
            raise ValueError(f"row {i}: missing diagonal entry")
    if operator and A.shape[0] != A.shape[1]:
        raise ValueError("operator matrices must be square")


def is_symmetric(A: sp.csr_matrix, rtol: float = 1e-12) -> bool:
    """Entrywise check ``|a_ij - a_ji| <= rtol * max(|a_ij|, |a_ji|, 1)``."""
    if A.shape[0] != A.shape[1]:
        return False
    A = A.tocoo()
    B = sp.csr_matrix(A)
    T = sp.csr_matrix(A.T)
    diff = abs(B - T)
    scale = abs(B).maximum(abs(T))
    diff = diff.tocoo()
    if diff.nnz == 0:
        return True
    bound = np.maximum(np.asarray(scale[diff.row, diff.col]).ravel(), 1.0) * rtol
    return bool(np.all(diff.data <= bound))


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    if x.shape[0] != A.shape[1]:
        raise DimensionError(f"spmv: A is {A.shape}, x has length {x.shape[0]}")
    return A @ x


def residual(A: sp.csr_matrix, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``b - A x``."""
    if b.shape[0] != A.shape[0]:
        raise DimensionError(f"residual: A is {A.shape}, b has length {b.shape[0]}")
    return b - spmv(A, x)


def _canonical(C) -> sp.csr_matrix:
    C = sp.csr_matrix(C)
    C.sum_duplicates()
    small = np.abs(C.data) < _DROP_TOL
    if small.any():
        C.data[small] = 0.0
        C.eliminate_zeros()
    C.sort_indices()
    return C


def transpose(A: sp.csr_matrix) -> sp.csr_matrix:
    return _canonical(A.T.tocsr())


def matmat(A: sp.csr_matrix, B: sp.csr_matrix) -> sp.csr_matrix:
    if A.shape[1] != B.shape[0]:
        raise DimensionError(f"matmat: {A.shape} x {B.shape}")
    return _canonical(A @ B)


def triple_product(R: sp.csr_matrix, A: sp.csr_matrix, P: sp.csr_matrix) -> sp.csr_matrix:
    """Galerkin product ``R A P`` as two sparse products."""
    if R.shape[1] != A.shape[0] or A.shape[1] != P.shape[0]:
        raise DimensionError(f"triple_product: {R.shape} x {A.shape} x {P.shape}")
    return matmat(R, matmat(A, P))


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous row blocks ``[b_k, b_{k+1})`` emulating a process row partition."""

    boundaries: tuple[int, ...]

    def __post_init__(self):
        b = self.boundaries
        if len(b) < 2 or b[0] != 0 or any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValueError(f"invalid block boundaries {b}")

    @classmethod
    def uniform(cls, nrows: int, blocks: int) -> "BlockPartition":
        """``blocks`` near-equal slabs, merged down to one row each when ``nrows < blocks``."""
        p = max(1, min(blocks, nrows))
        return cls(tuple((k * nrows) // p for k in range(p + 1)))

    @property
    def p(self) -> int:
        return len(self.boundaries) - 1

    @property
    def nrows(self) -> int:
        return self.boundaries[-1]

    def block_ids(self) -> np.ndarray:
        ids = np.empty(self.nrows, dtype=np.int64)
        for k in range(self.p):
            ids[self.boundaries[k]:self.boundaries[k + 1]] = k
        return ids


@dataclass(frozen=True)
class LuFactors:
    lu: np.ndarray
    piv: np.ndarray


def dense_lu_factor(A: np.ndarray) -> LuFactors:
    """LU with partial pivoting.

    A pivot whose magnitude is at most ``1e-14 * max|A|`` is treated as zero and
    raises :class:`SingularMatrixError` naming the row.
    """
    A = np.array(A, dtype=np.float64)
    n, m = A.shape
    if n != m:
        raise DimensionError(f"dense_lu_factor: matrix is {A.shape}")
    if n * m > DENSE_CAP * DENSE_CAP:
        raise ValueError(f"dense_lu_factor: {n}x{n} exceeds the dense cap {DENSE_CAP}")
    tol = 1e-14 * (np.abs(A).max() if A.size else 0.0)
    piv = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[p, k]) <= tol or A[p, k] == 0.0:
            raise SingularMatrixError(k, abs(A[p, k]))
        if p != k:
            A[[k, p]] = A[[p, k]]
            piv[[k, p]] = piv[[p, k]]
        A[k + 1:, k] /= A[k, k]
        A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k, k + 1:])
    return LuFactors(A, piv)


def dense_lu_solve(f: LuFactors, b: np.ndarray) -> np.ndarray:
    if b.shape[0] != f.lu.shape[0]:
        raise DimensionError(f"dense_lu_solve: factors are {f.lu.shape}, b has length {b.shape[0]}")
    y = scipy.linalg.solve_triangular(f.lu, b[f.piv], lower=True, unit_diagonal=True,
                                      check_finite=False)
    return scipy.linalg.solve_triangular(f.lu, y, lower=False, check_finite=False)


def norm2(x: np.ndarray) -> float:
    return float(np.linalg.norm(x))


def dot(x: np.ndarray, y: np.ndarray) -> float:
    if x.shape != y.shape:
        raise DimensionError(f"dot: {x.shape} vs {y.shape}")
    return float(x @ y)


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return ``alpha * x + y``."""
    if x.shape != y.shape:
        raise DimensionError(f"axpy: {x.shape} vs {y.shape}")
    return alpha * x + y


def write_matrix_market(path, A: sp.spmatrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment, precision=17)


def read_matrix_market(path) -> sp.csr_matrix:
    path = Path(path)
    if not path.exists() and path.with_suffix(".mtx").exists():
        path = path.with_suffix(".mtx")
    return as_csr(scipy.io.mmread(str(path)))
