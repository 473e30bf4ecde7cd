import numpy as np
import pytest

from flexamg.hierarchy import build_hierarchy
from flexamg.problems import PoissonSpec, build_anisotropic_poisson

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


def poisson(nd, c=(1.0, 1.0, 1.0)):
    return build_anisotropic_poisson(PoissonSpec(*c, nd=nd))


def dense_smoother(A, x, b, spec, part, marks=None):
    """Textbook matrix form: x + outer * M^{-1} (b - A x) with M built entry by entry."""
    Ad = A.toarray()
    n = Ad.shape[0]
    ids = part.block_ids()
    d = np.diag(Ad).copy()
    l1 = np.array([sum(abs(Ad[i, j]) for j in range(n) if ids[j] != ids[i]) for i in range(n)])
    if spec.variant == "l1":
        dmod, outer = d + l1, 1.0
    elif spec.kind == "Jacobi":
        dmod, outer = d / spec.omega, 1.0
    else:
        dmod, outer = d / spec.omega_i, spec.omega_o

    def one(x, backward):
        rank = np.arange(n) if not backward else -np.arange(n)
        if spec.ordering == "CF":
            # C-points strictly before F-points inside each block
            rank = rank + np.where(marks == 1, -10 * n, 0)
        M = np.diag(dmod)
        for i in range(n):
            for j in range(n):
                if i == j or ids[i] != ids[j] or rank[j] >= rank[i]:
                    continue
                if spec.kind != "Jacobi" or (spec.ordering == "CF" and marks[i] == 0):
                    M[i, j] = Ad[i, j]
        return x + outer * np.linalg.solve(M, b - Ad @ x)

    if spec.kind == "GSS":
        return one(one(x, False), True)
    return one(x, spec.kind == "GSB")



@pytest.fixture(scope="session")
def hier_27():
    """Two-level hierarchy on the 3x3x3 Poisson problem."""
    return build_hierarchy(poisson(3))


@pytest.fixture(scope="session")
def hier_iso8():
    return build_hierarchy(poisson(8))


@pytest.fixture(scope="session")
def hier_aniso6():
    return build_hierarchy(poisson(6, (1e-3, 1.0, 1.0)))
