import numpy as np
import pytest

from hhoch.hho import HHOSpace
from hhoch.mesh import generate_cartesian, generate_hexagonal, generate_triangular

MESHES = {
    "cartesian": lambda: generate_cartesian(4, 4),
    "triangular": lambda: generate_triangular(4),
    "hexagonal": lambda: generate_hexagonal(4),
}


@pytest.fixture(scope="session")
def space_cache():
    cache = {}

    def get(kind, k, n=4):
        key = (kind, k, n)
        if key not in cache:
            mesh = {"cartesian": lambda: generate_cartesian(n, n), "triangular": lambda: generate_triangular(n), "hexagonal": lambda: generate_hexagonal(n)}[kind]()
            cache[key] = HHOSpace(mesh, k)
        return cache[key]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_polynomial(rng, degree):
    """Random global polynomial of total degree ``degree`` as a vectorized callable."""
    exps = [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]
    coef = rng.uniform(-1, 1, len(exps))

    def fn(x):
        return sum(c * x[..., 0] ** a * x[..., 1] ** b for c, (a, b) in zip(coef, exps))

    return fn


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
