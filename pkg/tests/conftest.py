import numpy as np
import pytest

from wignerfrag.basis import build_basis
from wignerfrag.integrals import build_tables
from wignerfrag.torus import cell_from_rs


@pytest.fixture(scope="session")
def cell3():
    return cell_from_rs(105.0, 3)


@pytest.fixture(scope="session")
def small_tables():
    """N=2 square cell with a 6x6 basis and the pinning charge, ERIs stored."""
    cell = cell_from_rs(105.0, 2)
    basis = build_basis(cell, 6, 6, 0.8)
    return build_tables(basis, pin_charge=0.1, store_eri=True)


@pytest.fixture(scope="session")
def rect_tables():
    """Rectangular cell, unequal basis counts, so x/y mix-ups show up."""
    cell = cell_from_rs(105.0, 2, aspect=0.7)
    basis = build_basis(cell, 6, 5, 0.8)
    return build_tables(basis, pin_charge=0.1, store_eri=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
