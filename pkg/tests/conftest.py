import numpy as np
import pytest

import fieldtess as ft


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once so timed tests measure steady state."""
    mesh = ft.gen_periodic_grid(6, 6)
    lap = ft.build_laplacian(mesh, "uniform")
    fld = ft.init_field(mesh, [0])
    ft.evolve(fld, lap, ft.CouplingParams(), max_steps=3)
    a = ft.SparseMat.from_dense(np.eye(3))
    ft.spgemm(a, a)
    ft.transpose(a)


@pytest.fixture(scope="session")
def torus64():
    return ft.gen_periodic_grid(64, 64)


@pytest.fixture(scope="session")
def torus64_lap(torus64):
    return ft.build_laplacian(torus64, "uniform")


@pytest.fixture(scope="session")
def icosphere4():
    return ft.gen_icosphere(4)


def random_sparse(rng, n_rows, n_cols, density=0.1, nonneg=False):
    dense = rng.random((n_rows, n_cols))
    mask = rng.random((n_rows, n_cols)) < density
    dense = dense * mask
    if not nonneg:
        dense *= np.where(rng.random((n_rows, n_cols)) < 0.5, -1.0, 1.0)
    return dense
