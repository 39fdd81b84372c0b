import numpy as np
import pytest
import scipy.linalg

from wignerfrag.basis import build_basis
from wignerfrag.errors import LinearDependenceCollapse, NotConverged
from wignerfrag.integrals import build_tables
from wignerfrag.scf import (
    DIIS,
    OrbitalHessian,
    ScfOptions,
    _Problem,
    canonical_orthogonalization,
    electronic_energy,
    fock_build,
    rotate_orbitals,
    scf_solve,
    state_invariants,
    two_stage_protocol,
)
from wignerfrag.torus import cell_from_rs


@pytest.fixture(scope="module")
def pinned_state(small_tables):
    return scf_solve(small_tables, ScfOptions(), include_pin=True)


@pytest.fixture(scope="module")
def two_stage_state(small_tables):
    return two_stage_protocol(small_tables, ScfOptions())


def test_canonical_orthogonalization_drops_small_eigenvalues():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(8, 5))
    S = A @ A.T + 1e-12 * np.eye(8)  # rank 5
    X, s = canonical_orthogonalization(S, 1e-7)
    assert X.shape == (8, 5)
    np.testing.assert_allclose(X.T @ S @ X, np.eye(5), atol=1e-10)
    assert len(s) == 8


def test_options_validation():
    with pytest.raises(ValueError):
        ScfOptions(conv_energy=0)
    with pytest.raises(ValueError):
        ScfOptions(damping=1.0)
    with pytest.raises(ValueError):
        ScfOptions(pin_charge=-0.1)
    with pytest.raises(ValueError):
        ScfOptions(diis_depth=0)


def test_one_electron_energy_is_lowest_core_eigenvalue():
    cell = cell_from_rs(105.0, 1)
    tables = build_tables(build_basis(cell, 6, 6, 0.8), pin_charge=0.1)
    for include_pin in (False, True):
        H = tables.hcore(include_pin)
        ref = scipy.linalg.eigh(H, tables.S, eigvals_only=True)[0]
        state = scf_solve(tables, ScfOptions(), include_pin=include_pin)
        assert abs(state.energy - ref) < 1e-10


def test_pinned_state_invariants(small_tables, pinned_state):
    inv = state_invariants(pinned_state, small_tables.S)
    assert inv["orthonormality"] < 1e-10
    assert inv["trace"] < 1e-10
    assert inv["idempotency"] < 1e-10 * np.abs(pinned_state.density).max()
    F = fock_build(small_tables, pinned_state.density, True)
    D, S = pinned_state.density, small_tables.S
    X, _ = canonical_orthogonalization(S)
    comm = X.T @ (F @ D @ S - S @ D @ F) @ X
    assert np.abs(comm).max() < 1e-6 * np.ptp(pinned_state.orbital_energies)
    assert pinned_state.converged and pinned_state.lowest_hessian_eigenvalue >= -1e-5


def test_energy_expression_matches_explicit_sums(small_tables, pinned_state):
    D = pinned_state.density
    full = small_tables.eri.dense()
    H = small_tables.hcore(True)
    coul = 0.5 * np.einsum("ij,ijkl,kl->", D, full, D)
    exch = 0.5 * np.einsum("ij,ikjl,kl->", D, full, D)
    ref = np.sum(D * H) + coul - exch
    F = fock_build(small_tables, D, True)
    assert electronic_energy(small_tables, D, F, True) == pytest.approx(ref, rel=1e-11)
    assert pinned_state.energy == pytest.approx(ref, rel=1e-11)


def test_fock_from_store_matches_operator(small_tables, rng):
    C = rng.normal(size=(36, 2))
    D = C @ C.T
    store = small_tables.eri
    ref = small_tables.T + store.coulomb_matrix(D) - store.exchange_matrix(D)
    np.testing.assert_allclose(fock_build(small_tables, D), ref, atol=1e-12 * np.abs(ref).max())
    np.testing.assert_allclose(fock_build(small_tables, D, orbitals=C), ref, atol=1e-12 * np.abs(ref).max())


def test_converged_state_is_a_minimum_under_rotations(small_tables, pinned_state, rng):
    prob = _Problem(small_tables, ScfOptions(), True, 2)
    C_all = prob.complete(pinned_state.coeffs)
    for _ in range(5):
        k = rng.normal(size=(C_all.shape[1] - 2, 2))
        k *= 1e-3 / np.linalg.norm(k)
        e = prob.fock_energy(rotate_orbitals(C_all, k, 2)[:, :2])[2]
        assert e > pinned_state.energy


def test_orbital_hessian_against_finite_differences(rect_tables, rng):
    prob = _Problem(rect_tables, ScfOptions(), True, 2)
    C = prob.X[:, :2] + 0.3 * prob.X[:, 2:4]
    C_all = prob.complete(C @ np.linalg.inv(np.linalg.cholesky(C.T @ rect_tables.S @ C)).T)

    def grad(Ca):
        _, F, e = prob.fock_energy(Ca[:, :2])
        return OrbitalHessian(rect_tables, Ca, 2, F).gradient(), e

    g0, e0 = grad(C_all)
    hess = OrbitalHessian(rect_tables, C_all, 2, prob.fock_energy(C_all[:, :2])[1])
    k = rng.normal(size=g0.shape)
    h = 1e-4
    gp, ep = grad(rotate_orbitals(C_all, h * k, 2))
    gm, em = grad(rotate_orbitals(C_all, -h * k, 2))
    assert (ep - em) / (2 * h) == pytest.approx(np.vdot(g0, k), rel=1e-6)
    hv = hess.matvec(k)
    assert np.abs((gp - gm) / (2 * h) - hv).max() < 1e-5 * np.abs(hv).max()
    assert (ep - 2 * e0 + em) / h**2 == pytest.approx(np.vdot(k, hv), rel=1e-5)


def test_two_stage_bookkeeping(two_stage_state):
    st = two_stage_state
    assert set(st.stages) == {"pinned", "free"}
    assert st.stages["free"]["energy"] == st.energy
    assert st.stages["pinned"]["converged"] and not st.include_pin
    # the pin lowers the energy
    assert st.stages["pinned"]["energy"] < st.energy


def test_zero_pin_skips_first_stage(small_tables):
    direct = scf_solve(small_tables, ScfOptions(pin_charge=0.0), include_pin=False)
    staged = two_stage_protocol(small_tables, ScfOptions(pin_charge=0.0))
    assert set(staged.stages) == {"free"}
    assert abs(staged.energy - direct.energy) < 1e-7


def test_pinned_start_reaches_same_energy_as_free_start(small_tables, two_stage_state):
    free = scf_solve(small_tables, ScfOptions(seed=3), include_pin=False)
    assert free.energy == pytest.approx(two_stage_state.energy, abs=1e-8)


def test_same_seed_is_deterministic(small_tables, two_stage_state):
    again = two_stage_protocol(small_tables, ScfOptions())
    assert again.energy == two_stage_state.energy
    np.testing.assert_array_equal(again.density, two_stage_state.density)


def test_not_converged_carries_state_and_stage(small_tables):
    opts = ScfOptions(max_iter=2, max_newton_iter=1, stability=False)
    with pytest.raises(NotConverged) as info:
        two_stage_protocol(small_tables, opts)
    assert info.value.stage == "pinned"
    assert info.value.best is not None and info.value.best.coeffs.shape == (36, 2)


def test_linear_dependence_collapse(small_tables):
    with pytest.raises(LinearDependenceCollapse):
        scf_solve(small_tables, ScfOptions(s_threshold=1e12), n_electrons=2)


def test_pin_requires_tables_with_pin():
    tables = build_tables(build_basis(cell_from_rs(105.0, 2), 4, 4, 0.8))
    with pytest.raises(ValueError):
        two_stage_protocol(tables, ScfOptions(pin_charge=0.1))


def test_diis_reproduces_exact_linear_combination():
    # residuals linear in F: extrapolation must find the zero-residual mix
    F1, F2 = np.diag([1.0, 2.0]), np.diag([3.0, 0.0])
    d = DIIS(4)
    d.push(F1, np.array([1.0]))
    d.push(F2, np.array([-1.0]))
    np.testing.assert_allclose(d.extrapolate(), 0.5 * (F1 + F2))


def test_stability_analysis_escapes_saddle():
    # N=3 on a 10x10 basis: DIIS from seed 0 stops on a mirror-symmetric saddle
    cell = cell_from_rs(105.0, 3)
    tables = build_tables(build_basis(cell, 10, 10, 0.8), pin_charge=0.1)
    plain = scf_solve(tables, ScfOptions(stability=False), include_pin=True)
    stable = scf_solve(tables, ScfOptions(), include_pin=True)
    assert stable.lowest_hessian_eigenvalue >= -1e-5
    assert stable.energy < plain.energy - 1e-5
