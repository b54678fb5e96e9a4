import numpy as np
import pytest

from latent_base.numerics import make_rng


@pytest.fixture
def rng():
    return make_rng(1234, "tests")


def random_spd(rng, d, floor=1.0):
    a = rng.standard_normal((d, d))
    return a.T @ a + floor * np.eye(d)


def cofactor_det(m):
    """Laplace expansion along the first row; independent of any factorization."""
    m = np.asarray(m, dtype=float)
    if m.shape == (1, 1):
        return m[0, 0]
    return sum((-1) ** j * m[0, j] * cofactor_det(np.delete(m[1:], j, axis=1)) for j in range(m.shape[0]))


def central_diff(f, x, delta=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + delta
        hi = f()
        x[i] = old - delta
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * delta)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
