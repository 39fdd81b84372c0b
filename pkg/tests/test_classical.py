import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wignerfrag.classical import (
    Configuration,
    MinimizerOptions,
    classical_energy,
    classical_gradient,
    configuration_distance,
    deduplicate,
    energy_change,
    gauge_fix,
    is_local_minimum,
    minimize,
    multi_start,
    point_group,
    random_configuration,
)
from wignerfrag.errors import CoincidentPoints, NotConverged
from wignerfrag.torus import TorusCell, cell_from_rs, max_distance


def test_two_charges_at_half_diagonal():
    cell = TorusCell(200.0, 150.0, 2)
    assert classical_energy([[0, 0], [100.0, 75.0]], cell) == pytest.approx(1.0 / max_distance(cell), rel=1e-14)


def test_single_charge_has_no_energy():
    cell = TorusCell(10.0, 10.0, 1)
    assert classical_energy([[1.0, 2.0]], cell) == 0.0
    assert classical_gradient([[1.0, 2.0]], cell).shape == (1, 2)


def test_coincident_charges_raise():
    cell = TorusCell(10.0, 10.0, 2)
    with pytest.raises(CoincidentPoints):
        classical_energy([[1.0, 1.0], [11.0, 1.0]], cell)


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_gradient_matches_finite_differences(n, rng):
    cell = cell_from_rs(105.0, n, aspect=0.8)
    h = 1e-4
    for _ in range(25):
        x = random_configuration(cell, rng)
        g = classical_gradient(x, cell).ravel()
        fd = np.empty_like(g)
        flat = x.ravel()
        for k in range(flat.size):
            e = np.zeros_like(flat)
            e[k] = h
            fd[k] = energy_change(flat - e, 2 * e, cell) / (2 * h)
        scale = np.abs(g).max()
        assert np.max(np.abs(fd - g)) / scale < 1e-6


def test_energy_change_is_exact_difference(rng):
    cell = cell_from_rs(105.0, 6)
    x = random_configuration(cell, rng)
    step = rng.normal(scale=5.0, size=x.shape)
    assert energy_change(x, step, cell) == pytest.approx(
        classical_energy(x + step, cell) - classical_energy(x, cell), rel=1e-9
    )
    # tiny steps keep relative accuracy where plain subtraction cannot
    tiny = 1e-9 * step
    dU = energy_change(x, tiny, cell)
    lin = float(np.sum(classical_gradient(x, cell) * tiny))
    assert dU == pytest.approx(lin, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 7), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.integers(0, 2**32 - 1))
def test_energy_invariant_under_translation_and_symmetry(n, tx, ty, seed):
    cell = cell_from_rs(105.0, n, aspect=1.0)
    x = random_configuration(cell, np.random.default_rng(seed))
    u = classical_energy(x, cell)
    assert classical_energy(x + [tx, ty], cell) == pytest.approx(u, rel=1e-10)
    for op in point_group(cell):
        assert classical_energy(x @ op.T, cell) == pytest.approx(u, rel=1e-10)
    assert classical_energy(x[::-1], cell) == pytest.approx(u, rel=1e-12)
    # gradient sums to zero (no net force)
    g = classical_gradient(x, cell)
    assert np.abs(g.sum(axis=0)).max() <= 1e-9 * np.abs(g).max()


def test_point_group_orders():
    assert len(point_group(TorusCell(10.0, 10.0))) == 8
    assert len(point_group(TorusCell(10.0, 12.0))) == 4


def test_gauge_fix_moves_first_charge_to_origin():
    cell = TorusCell(10.0, 10.0, 2)
    out = gauge_fix([[3.0, 4.0], [1.0, 1.0]], cell)
    np.testing.assert_allclose(out, [[0.0, 0.0], [8.0, 7.0]])


def test_minimize_two_charges_goes_to_half_diagonal():
    cell = cell_from_rs(105.0, 2, aspect=0.6)
    conf = minimize([[0.0, 0.0], [10.0, 20.0]], cell)
    assert conf.energy == pytest.approx(1.0 / max_distance(cell), rel=1e-12)
    np.testing.assert_allclose(np.abs(cell.minimum_image(conf.positions[1] - conf.positions[0])),
                               [cell.lx / 2, cell.ly / 2], atol=1e-6 * cell.lx)


def test_three_charges_on_diagonal_energy():
    # equally spaced on the diagonal: three pairs at separation (L/3, L/3)
    cell = cell_from_rs(105.0, 3)
    res = multi_start(cell, 10, seed=3)
    expected = 3 * 2 * math.pi / (cell.lx * math.sqrt(6))
    assert res.best.energy == pytest.approx(expected, rel=1e-12)


def test_minimize_reports_not_converged_with_best():
    cell = cell_from_rs(105.0, 5)
    x0 = random_configuration(cell, np.random.default_rng(0))
    with pytest.raises(NotConverged) as info:
        minimize(x0, cell, MinimizerOptions(max_iter=2))
    assert isinstance(info.value.best, Configuration)
    assert info.value.best.energy <= classical_energy(x0, cell)


def test_multi_start_reproducible_and_worker_independent():
    cell = cell_from_rs(105.0, 5)
    a = multi_start(cell, 6, seed=11)
    b = multi_start(cell, 6, seed=11)
    c = multi_start(cell, 6, seed=11, workers=2)
    for r in (b, c):
        assert r.best.energy == a.best.energy
        np.testing.assert_array_equal(r.best.positions, a.best.positions)


def test_deduplicate_merges_symmetric_copies(rng):
    cell = cell_from_rs(105.0, 4)
    best = multi_start(cell, 4, seed=1).best
    copies = []
    for op in point_group(cell):
        x = (best.positions @ op.T + rng.uniform(0, cell.lx, 2))[rng.permutation(4)]
        copies.append(Configuration(cell.reduce(x), classical_energy(x, cell)))
    reps, counts = deduplicate(copies, cell)
    assert len(reps) == 1 and counts == [len(copies)]
    assert configuration_distance(copies[0], copies[-1], cell) < 1e-9 * cell.lx


def test_local_minimum_check_rejects_saddle():
    cell = cell_from_rs(105.0, 2)
    # charges a half-cell apart along x only: moving off the axis lowers U
    saddle = [[0.0, 0.0], [cell.lx / 2, 0.0]]
    assert np.abs(classical_gradient(saddle, cell)).max() < 1e-15
    assert not is_local_minimum(saddle, cell)
    assert is_local_minimum([[0.0, 0.0], [cell.lx / 2, cell.ly / 2]], cell)
