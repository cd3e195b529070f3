import numpy as np
import pytest

from wgns.mesh import from_triangles, generate_uniform_square

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def perturbed_square(n: int, amplitude: float = 0.2, seed: int = 0):
    """Unit-square mesh with interior vertices moved by up to ``amplitude`` * h."""
    base = generate_uniform_square(n)
    rng = np.random.default_rng(seed)
    v = base.vertices.copy()
    inner = (v[:, 0] > 1e-12) & (v[:, 0] < 1 - 1e-12) & (v[:, 1] > 1e-12) & (v[:, 1] < 1 - 1e-12)
    v[inner] += rng.uniform(-amplitude, amplitude, size=(inner.sum(), 2)) / n
    return from_triangles(v, base.triangles)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
