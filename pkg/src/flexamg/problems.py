"""Test systems: 3D anisotropic Poisson and a synthetic time-step matrix sequence."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .sparse import as_csr

__all__ = [
    "PoissonSpec", "TimestepSpec", "build_anisotropic_poisson", "build_timestep_sequence", "build_timestep_matrix",
    "diagonal_dominance_ratio", "random_vector", "zero_vector", "parse_problem", "MAX_UNKNOWNS",
]

#: Memory cap on generated systems (rows).
MAX_UNKNOWNS = 2_000_000


@dataclass(frozen=True)
class PoissonSpec:
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    nd: int = 32

    def __post_init__(self):
        for c in (self.c1, self.c2, self.c3):
            if not 1e-5 <= c <= 1.0:
                raise ValueError(f"anisotropy coefficient {c} outside [1e-5, 1]")
        if self.nd < 1:
            raise ValueError("nd must be >= 1")

    def to_dict(self) -> dict:
        return {"kind": "poisson", **asdict(self)}


@dataclass(frozen=True)
class TimestepSpec:
    """Surrogate for a radiation-diffusion time-step sequence ``A_k = M + dt (K + C_k)``.

    ``C_k`` is a positive diagonal growing like ``decay**-(k-1)``, so the diagonal
    share of every later system is larger and diagonal scaling gets easier.
    """

    nd: int = 16
    k_max: int = 20
    dt: float = 10.0
    reaction_scale: float = 0.01
    decay: float = 0.7

    def __post_init__(self):
        if self.nd < 1 or self.k_max < 1:
            raise ValueError("nd and k_max must be >= 1")
        if self.dt <= 0 or self.reaction_scale < 0:
            raise ValueError("dt must be > 0 and reaction_scale >= 0")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {"kind": "timestep", **asdict(self)}


def _check_size(nd: int) -> int:
    n = nd ** 3
    if n > MAX_UNKNOWNS:
        raise MemoryError(f"nd={nd} gives {n} unknowns, above the cap of {MAX_UNKNOWNS}")
    return n


def _stencil(nd: int, coeffs: tuple[float, float, float]) -> sp.csr_matrix:
    """7-point operator, x-fastest lexicographic ordering, Dirichlet boundary."""
    n = _check_size(nd)
    idx = np.arange(n)
    ix = idx % nd
    iy = (idx // nd) % nd
    iz = idx // (nd * nd)
    rows = [idx]
    cols = [idx]
    vals = [np.full(n, 2.0 * sum(coeffs))]
    for pos, stride, c in ((ix, 1, coeffs[0]), (iy, nd, coeffs[1]), (iz, nd * nd, coeffs[2])):
        lo = pos > 0
        hi = pos < nd - 1
        rows += [idx[lo], idx[hi]]
        cols += [idx[lo] - stride, idx[hi] + stride]
        vals += [np.full(lo.sum(), -c), np.full(hi.sum(), -c)]
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return as_csr(A)


def build_anisotropic_poisson(spec: PoissonSpec) -> sp.csr_matrix:
    """Matrix of ``-div(diag(c1, c2, c3) grad u)`` on an ``nd**3`` grid, unit spacing."""
    return _stencil(spec.nd, (spec.c1, spec.c2, spec.c3))


def reaction_diagonal(spec: TimestepSpec, k: int) -> np.ndarray:
    n = spec.nd ** 3
    i = np.arange(n)
    return spec.reaction_scale * spec.decay ** (-(k - 1)) * (1.0 + 0.5 * np.sin(2 * np.pi * i / n))


def build_timestep_sequence(spec: TimestepSpec) -> list[sp.csr_matrix]:
    """Systems ``A_1 .. A_kmax``; odd ``k`` stand for radiation, even for conduction steps."""
    return [build_timestep_matrix(spec, k) for k in range(1, spec.k_max + 1)]


def build_timestep_matrix(spec: TimestepSpec, k: int) -> sp.csr_matrix:
    if not 1 <= k <= spec.k_max:
        raise ValueError(f"step {k} outside 1..{spec.k_max}")
    K = _stencil(spec.nd, (1.0, 1.0, 1.0))
    base = sp.identity(K.shape[0], format="csr") + spec.dt * K
    return as_csr(base + sp.diags(spec.dt * reaction_diagonal(spec, k)))


def diagonal_dominance_ratio(A: sp.csr_matrix) -> float:
    """``sum |a_ii| / sum_{i != j} |a_ij|``; ``inf`` when there are no off-diagonals."""
    A = sp.coo_matrix(A)
    on = A.row == A.col
    diag = float(np.abs(A.data[on]).sum())
    off = float(np.abs(A.data[~on]).sum())
    return np.inf if off == 0.0 else diag / off


def random_vector(n: int, seed: int) -> np.ndarray:
    """Uniform entries in ``[-1, 1)`` from a PCG64 stream (platform independent)."""
    return np.random.Generator(np.random.PCG64(seed)).uniform(-1.0, 1.0, n)


def zero_vector(n: int) -> np.ndarray:
    return np.zeros(n)


def parse_problem(text: str, **timestep_overrides):
    """Parse ``poisson:ND:c1,c2,c3`` or ``timestep:ND:K``.

    Returns ``(label, matrix, spec)``.
    """
    parts = text.split(":")
    try:
        if parts[0] == "poisson":
            nd = int(parts[1])
            cs = (1.0, 1.0, 1.0) if len(parts) < 3 else tuple(float(c) for c in parts[2].split(","))
            if len(cs) != 3:
                raise ValueError("need three anisotropy coefficients")
            spec = PoissonSpec(*cs, nd=nd)
            return text, build_anisotropic_poisson(spec), spec
        if parts[0] == "timestep":
            nd = int(parts[1])
            k = int(parts[2]) if len(parts) > 2 else 1
            opts = dict(timestep_overrides)
            opts["k_max"] = max(k, opts.get("k_max", k))
            spec = TimestepSpec(nd=nd, **opts)
            return text, build_timestep_matrix(spec, k), spec
    except (IndexError, TypeError) as exc:
        raise ValueError(f"malformed problem {text!r}: {exc}") from None
    raise ValueError(f"unknown problem kind in {text!r}")
