import numpy as np
import pytest

from misfit import autodiff as ad


def tape_grad(f, x):
    """Value and reverse-mode gradient of scalar ``f`` at array ``x``."""
    with ad.Tape() as tape:
        v = tape.variable(x)
        out = f(v)
        return float(ad.value_of(out)), ad.grad(out, v)


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        g[i] = (float(f(up)) - float(f(down))) / (2 * h)
    return g


def max_rel_err(g, ref):
    # relative to the largest reference entry; per-entry ratios blow up near zero
    return float(np.max(np.abs(g - ref)) / max(np.max(np.abs(ref)), 1e-12))


def fd_rel_err(f, x, h=1e-5):
    _, g = tape_grad(f, x)
    return max_rel_err(g, central_diff(f, x, h))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tables():
    """Lazily reproduce a results table (10 seeds, every row) once per session."""
    from misfit.training import reproduce_table

    cache = {}

    def get(table_id):
        if table_id not in cache:
            cache[table_id] = {r.model: r for r in reproduce_table(table_id, 10)}
        return cache[table_id]

    return get
