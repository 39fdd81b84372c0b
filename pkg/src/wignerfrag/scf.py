"""High-spin Hartree-Fock for electrons on the Clifford torus.

All ``N`` electrons occupy one spin channel, so the wave function is a
single determinant of ``N`` spatial orbitals and one Fock matrix with full
exchange describes it::

    F = T (+ Vpin) + J(D) - K(D),   D = C C^T,   C^T S C = 1

The two-stage protocol first converges with a small positive charge at
the origin, which pins one electron and breaks the translational symmetry,
then removes the charge and reconverges from that density.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .errors import LinearDependenceCollapse, NotConverged
from .integrals import IntegralTables

log = logging.getLogger(__name__)


@dataclass
class ScfOptions:
    conv_density_rms: float = 1e-8
    conv_energy: float = 1e-9
    conv_gradient: float = 1e-7  # orbital-rotation gradient norm, second-order steps only
    max_iter: int = 200
    diis_depth: int = 8
    damping: float = 0.3
    damping_iters: int = 5
    pin_charge: float = 0.1
    seed: int = 0
    guess_noise: float = 1e-3
    s_threshold: float = 1e-7
    stability: bool = True
    stability_tol: float = 1e-5
    max_stability_kicks: int = 5
    max_newton_iter: int = 100
    stall_iters: int = 40

    def __post_init__(self):
        for name in ("conv_density_rms", "conv_energy", "conv_gradient", "s_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1 or self.diis_depth < 1:
            raise ValueError("max_iter and diis_depth must be >= 1")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")
        if self.pin_charge < 0:
            raise ValueError("pin_charge must be non-negative")


@dataclass
class ScfState:
    coeffs: np.ndarray  # (P, N)
    density: np.ndarray  # (P, P)
    energy: float
    iteration: int
    history: list = field(default_factory=list)  # [(energy, density rms change)]
    orbital_energies: np.ndarray | None = None
    converged: bool = False
    include_pin: bool = False
    stages: dict = field(default_factory=dict)
    s_spectrum: dict = field(default_factory=dict)
    lowest_hessian_eigenvalue: float | None = None

    @property
    def n_electrons(self) -> int:
        return self.coeffs.shape[1]


def canonical_orthogonalization(S: np.ndarray, threshold: float = 1e-7):
    """``X = U s^{-1/2}`` over the eigenvectors of ``S`` with ``s > threshold``."""
    s, U = np.linalg.eigh(S)
    keep = s > threshold
    X = U[:, keep] / np.sqrt(s[keep])
    return X, s


def fock_build(tables: IntegralTables, D: np.ndarray, include_pin: bool = False, orbitals=None) -> np.ndarray:
    """``F = T (+ Vpin) + J(D) - K(D)`` for a fully spin-polarized determinant."""
    H = tables.hcore(include_pin)
    if not np.any(D):
        return H.copy()
    J = tables.coulomb.coulomb_matrix(D)
    K = tables.coulomb.exchange_matrix(D, orbitals=orbitals)
    F = H + J - K
    return 0.5 * (F + F.T)


def electronic_energy(tables: IntegralTables, D: np.ndarray, F: np.ndarray, include_pin: bool = False) -> float:
    """``E = 1/2 tr D (Hcore + F)``."""
    H = tables.hcore(include_pin)
    return 0.5 * float(np.sum(D * (H + F)))


class DIIS:
    """Pulay extrapolation of Fock matrices from commutator residuals."""

    def __init__(self, depth: int):
        self.depth = depth
        self.focks: list[np.ndarray] = []
        self.errors: list[np.ndarray] = []

    def push(self, F, err):
        self.focks.append(F)
        self.errors.append(err)
        if len(self.focks) > self.depth:
            self.focks.pop(0)
            self.errors.pop(0)

    def extrapolate(self) -> np.ndarray:
        n = len(self.focks)
        if n < 2:
            return self.focks[-1]
        B = np.empty((n + 1, n + 1))
        for i in range(n):
            for j in range(i + 1):
                B[i, j] = B[j, i] = np.vdot(self.errors[i], self.errors[j])
        scale = np.max(np.diag(B)[:n])
        if scale <= 0:
            return self.focks[-1]
        B[:n, :n] /= scale
        B[n, :n] = B[:n, n] = -1.0
        B[n, n] = 0.0
        rhs = np.zeros(n + 1)
        rhs[n] = -1.0
        try:
            c = np.linalg.solve(B, rhs)[:n]
        except np.linalg.LinAlgError:
            c = np.linalg.lstsq(B, rhs, rcond=None)[0][:n]
        return sum(ci * Fi for ci, Fi in zip(c, self.focks))


def _occupy(F, X, n):
    eps, Cp = np.linalg.eigh(X.T @ F @ X)
    # eigh returns ascending eigenvalues; ties keep the solver's order
    return eps, X @ Cp[:, :n]


def _core_guess(tables, X, n, include_pin, opts):
    H = tables.hcore(include_pin)
    _, Cp = np.linalg.eigh(X.T @ H @ X)
    occ = Cp[:, :n].copy()
    if opts.guess_noise > 0:
        rng = np.random.default_rng(opts.seed)
        occ += rng.uniform(-opts.guess_noise, opts.guess_noise, size=occ.shape)
        occ, _ = np.linalg.qr(occ)
    return X @ occ


class OrbitalHessian:
    """Energy gradient and Hessian with respect to occupied-virtual rotations.

    Orbitals are rotated as ``C -> C expm(K)`` with ``K = [[0, -k^T], [k, 0]]``
    and ``k`` of shape (virtual, occupied).  Everything is expressed in the
    current molecular-orbital basis; the two-electron parts are evaluated on
    the quadrature grid with the same convolution as the Fock build.
    """

    def __init__(self, tables: IntegralTables, C_all: np.ndarray, n: int, F: np.ndarray):
        op = tables.coulomb
        self.op = op
        self.n = n
        self.h2 = op.grid.weight
        self.shape = (op.grid.mx, op.grid.my)
        Fmo = C_all.T @ F @ C_all
        self.Foo = Fmo[:n, :n]
        self.Fvv = Fmo[n:, n:]
        self.Fvo = Fmo[n:, :n]
        G = op._flat
        self.phi_o = C_all[:, :n].T @ G
        self.phi_v = C_all[:, n:].T @ G
        nv = self.phi_v.shape[0]
        m = G.shape[1]
        prod = (self.phi_o[:, None, :] * self.phi_o[None, :, :]).reshape(n * n, *self.shape)
        self.v_oo = op.convolve(prod).reshape(n, n, m)
        self.a_vo = np.empty((nv, n, m))
        for i in range(n):
            prod = (self.phi_v * self.phi_o[i]).reshape(nv, *self.shape)
            self.a_vo[:, i, :] = op.convolve(prod).reshape(nv, m)

    @property
    def dim(self) -> int:
        return self.Fvo.size

    def gradient(self) -> np.ndarray:
        return 2.0 * self.Fvo

    def diagonal(self) -> np.ndarray:
        """Orbital-energy-difference approximation, used as a preconditioner."""
        return 2.0 * (np.diag(self.Fvv)[:, None] - np.diag(self.Foo)[None, :])

    def matvec(self, kappa: np.ndarray) -> np.ndarray:
        kappa = kappa.reshape(self.Fvo.shape)
        u = kappa.T @ self.phi_v  # rotated-in parts of the occupied orbitals
        n1 = 2.0 * np.sum(u * self.phi_o, axis=0)
        jpot = self.op.convolve(n1.reshape(self.shape)).ravel()
        jpart = self.h2 * (self.phi_v * jpot) @ self.phi_o.T
        kpart = self.h2 * self.phi_v @ np.einsum("ir,ijr->jr", u, self.v_oo).T
        for i in range(self.n):
            kpart += self.h2 * (self.a_vo[:, i, :] * u[i]) @ self.phi_o.T
        out = 2.0 * (self.Fvv @ kappa - kappa @ self.Foo) + 2.0 * (jpart - kpart)
        return out

    def lowest_eigenpair(self, seed: int = 0):
        from scipy.sparse.linalg import LinearOperator, eigsh

        dim = self.dim
        op = LinearOperator((dim, dim), matvec=lambda v: self.matvec(v).ravel(), dtype=float)
        v0 = np.random.default_rng(seed).standard_normal(dim)
        vals, vecs = eigsh(op, k=1, which="SA", v0=v0, tol=1e-10, maxiter=20 * dim)
        return float(vals[0]), vecs[:, 0].reshape(self.Fvo.shape)


def rotate_orbitals(C_all: np.ndarray, kappa: np.ndarray, n: int) -> np.ndarray:
    nv = C_all.shape[1] - n
    K = np.zeros((n + nv, n + nv))
    K[n:, :n] = kappa
    K[:n, n:] = -kappa.T
    return C_all @ expm(K)


def _steihaug(matvec, g, radius, tol, max_iter):
    """Truncated CG for ``min g.s + s.Hs/2`` subject to ``|s| <= radius``."""
    s = np.zeros_like(g)
    r = g.copy()
    d = -r
    rr = np.vdot(r, r)
    if np.sqrt(rr) < tol:
        return s
    for _ in range(max_iter):
        Hd = matvec(d)
        dHd = np.vdot(d, Hd)
        if dHd <= 0:
            return s + _to_boundary(s, d, radius) * d
        alpha = rr / dHd
        if np.linalg.norm(s + alpha * d) >= radius:
            return s + _to_boundary(s, d, radius) * d
        s = s + alpha * d
        r = r + alpha * Hd
        rr_new = np.vdot(r, r)
        if np.sqrt(rr_new) < tol:
            break
        d = -r + (rr_new / rr) * d
        rr = rr_new
    return s


def _to_boundary(s, d, radius):
    a = np.vdot(d, d)
    b = 2 * np.vdot(s, d)
    c = np.vdot(s, s) - radius**2
    return (-b + np.sqrt(b * b - 4 * a * c)) / (2 * a)


class _Problem:
    """Bundles what the iterations need for one (tables, pin, N) combination."""

    def __init__(self, tables, opts, include_pin, n):
        self.tables = tables
        self.opts = opts
        self.include_pin = include_pin
        self.n = n
        self.S = tables.S
        self.X, s = canonical_orthogonalization(tables.S, opts.s_threshold)
        self.spectrum = {"min": float(s.min()), "max": float(s.max()), "kept": int(self.X.shape[1]), "total": len(s)}
        self._XS = self.X.T @ tables.S
        if self.X.shape[1] < n:
            raise LinearDependenceCollapse(f"only {self.X.shape[1]} orthogonal functions survive for {n} electrons")

    def density_rms(self, D1, D0):
        """RMS change of the density in the orthonormalized basis, where its elements are O(1)."""
        d = self._XS @ (D1 - D0) @ self._XS.T
        return float(np.sqrt(np.mean(d * d)))

    def fock_energy(self, C):
        D = C @ C.T
        F = fock_build(self.tables, D, self.include_pin, orbitals=C)
        return D, F, electronic_energy(self.tables, D, F, self.include_pin)

    def semicanonical(self, C_occ, F):
        """Orbitals diagonalizing ``F`` separately in the occupied and virtual spaces.

        Leaves the density untouched, so the energy stays that of ``C_occ``;
        at convergence the eigenvalues are the orbital energies.
        """
        C_all = self.complete(C_occ)
        Fmo = C_all.T @ F @ C_all
        n = self.n
        eo, Uo = np.linalg.eigh(Fmo[:n, :n])
        ev, Uv = np.linalg.eigh(Fmo[n:, n:])
        return np.concatenate([eo, ev]), np.hstack([C_all[:, :n] @ Uo, C_all[:, n:] @ Uv])

    def complete(self, C_occ):
        """Extend occupied orbitals to a full S-orthonormal set (occupied first)."""
        # project the occupied space out of the orthonormal basis, keep the rest
        S = self.S
        Xo = self.X.T @ S @ C_occ
        q, _ = np.linalg.qr(np.hstack([Xo, np.eye(self.X.shape[1])]))
        return self.X @ np.hstack([Xo, q[:, self.n : self.X.shape[1]]])


def _diis_iterations(prob: _Problem, C, history):
    opts = prob.opts
    n, X, S = prob.n, prob.X, prob.S
    D = C @ C.T
    diis = DIIS(opts.diis_depth)
    e_old = None
    F_prev = None
    best_err, best_it = np.inf, 0
    for it in range(1, opts.max_iter + 1):
        F = fock_build(prob.tables, D, prob.include_pin, orbitals=C)
        energy = electronic_energy(prob.tables, D, F, prob.include_pin)
        err = X.T @ (F @ D @ S - S @ D @ F) @ X
        diis.push(F, err)
        if it <= opts.damping_iters:
            w = opts.damping * (1.0 - (it - 1) / opts.damping_iters) if F_prev is not None else 0.0
            F_use = (1.0 - w) * F + w * F_prev if w > 0 else F
        else:
            F_use = diis.extrapolate()
        F_prev = F_use
        _, C_new = _occupy(F_use, X, n)
        D_new = C_new @ C_new.T
        rms = prob.density_rms(D_new, D)
        de = np.inf if e_old is None else abs(energy - e_old)
        history.append((energy, rms))
        log.debug("diis %3d  E = %.12f  dE = %.2e  rms(dD) = %.2e", it, energy, de, rms)
        if rms < opts.conv_density_rms and de < opts.conv_energy:
            return C, True
        err_norm = float(np.max(np.abs(err)))
        if err_norm < 0.5 * best_err:
            best_err, best_it = err_norm, it
        elif it - best_it >= opts.stall_iters:
            log.debug("DIIS stalled at iteration %d", it)
            return C, False
        e_old = energy
        C, D = C_new, D_new
    return C, False


def _second_order(prob: _Problem, C_occ, history, max_iter, radius=0.2):
    """Trust-region Newton iterations on the occupied-virtual rotations."""
    opts = prob.opts
    n = prob.n
    C_all = prob.complete(C_occ)
    D, F, energy = prob.fock_energy(C_all[:, :n])
    for it in range(1, max_iter + 1):
        hess = OrbitalHessian(prob.tables, C_all, n, F)
        g = hess.gradient()
        gnorm = float(np.linalg.norm(g))
        # a small step alone is no proof: right after a kick the gradient is tiny too
        if gnorm < opts.conv_gradient:
            return C_all[:, :n], True
        step = _steihaug(hess.matvec, g, radius, tol=min(1e-3 * gnorm, 1e-12), max_iter=200)
        predicted = float(np.vdot(g, step) + 0.5 * np.vdot(step, hess.matvec(step)))
        C_try = rotate_orbitals(C_all, step, n)
        D_try, F_try, e_try = prob.fock_energy(C_try[:, :n])
        actual = e_try - energy
        snorm = float(np.linalg.norm(step))
        ratio = actual / predicted if predicted < 0 else -1.0
        if actual <= 0 or abs(actual) < 1e-15:
            rms = prob.density_rms(D_try, D)
            C_all, D, F, energy = C_try, D_try, F_try, e_try
            history.append((energy, rms))
            log.debug("newton %3d  E = %.12f  dE = %.2e  |g| = %.2e  rms = %.2e", it, energy, actual, gnorm, rms)
            if ratio > 0.75 and snorm > 0.8 * radius:
                radius = min(2.0 * radius, 1.0)
            elif ratio < 0.25:
                radius *= 0.5
        else:
            radius = 0.25 * snorm
            if radius < 1e-12:
                # no downhill step left: accept if the gradient is at noise level
                return C_all[:, :n], gnorm < 100 * opts.conv_gradient
    return C_all[:, :n], False


def _follow_instability(prob: _Problem, C_occ, history):
    """Kick along negative-curvature rotations until the solution is a local minimum."""
    opts = prob.opts
    n = prob.n
    lowest = None
    for kick in range(opts.max_stability_kicks + 1):
        D, F, energy = prob.fock_energy(C_occ)
        C_all = prob.complete(C_occ)
        hess = OrbitalHessian(prob.tables, C_all, n, F)
        lowest, vec = hess.lowest_eigenpair(opts.seed)
        log.debug("lowest orbital Hessian eigenvalue %.3e", lowest)
        if lowest >= -opts.stability_tol:
            return C_occ, lowest
        if kick == opts.max_stability_kicks:
            log.warning("solution still unstable (lambda = %.2e) after %d kicks", lowest, kick)
            break
        # line search along the unstable direction
        trials = []
        for angle in (0.05, 0.1, 0.2, 0.4, 0.8):
            C_try = rotate_orbitals(C_all, angle * vec / np.linalg.norm(vec), n)[:, :n]
            trials.append((prob.fock_energy(C_try)[2], angle, C_try))
        e_best, angle, C_kick = min(trials, key=lambda t: t[0])
        log.info("unstable solution (lambda = %.2e): kick by %.2f rad, dE = %.2e", lowest, angle, e_best - energy)
        # Newton steps only go downhill, so they cannot climb back to the saddle
        C_occ, ok = _second_order(prob, C_kick, history, opts.max_newton_iter)
        if not ok:
            raise NotConverged("SCF did not reconverge after a stability kick")
    return C_occ, lowest


def scf_solve(
    tables: IntegralTables,
    opts: ScfOptions | None = None,
    initial: np.ndarray | None = None,
    include_pin: bool = False,
    n_electrons: int | None = None,
) -> ScfState:
    """Converge the high-spin determinant.

    ``initial`` is an optional starting density; without it the core
    Hamiltonian guess with seeded coefficient noise is used.  DIIS runs for
    up to ``opts.max_iter`` iterations; if it stalls, trust-region Newton
    steps take over.  With ``opts.stability`` the converged solution is
    tested for negative orbital-rotation curvature and pushed off saddle
    points.

    Raises NotConverged (carrying the last state) and
    LinearDependenceCollapse if the orthogonalized basis has fewer than
    ``N`` functions.
    """
    opts = opts or ScfOptions()
    n = n_electrons or tables.basis.cell.n_electrons
    prob = _Problem(tables, opts, include_pin, n)
    if initial is None:
        C = _core_guess(tables, prob.X, n, include_pin, opts)
    else:
        F0 = fock_build(tables, initial, include_pin)
        _, C = _occupy(F0, prob.X, n)

    history = []
    C, ok = _diis_iterations(prob, C, history)
    if not ok:
        log.info("DIIS did not converge after %d iterations; switching to Newton steps", len(history))
        C, ok = _second_order(prob, C, history, opts.max_newton_iter)
    if not ok:
        D, F, energy = prob.fock_energy(C)
        last = ScfState(C, D, energy, len(history), history, None, False, include_pin, s_spectrum=prob.spectrum)
        raise NotConverged(f"SCF not converged after {len(history)} iterations", best=last)

    lowest = None
    if opts.stability:
        C, lowest = _follow_instability(prob, C, history)

    D, F, energy = prob.fock_energy(C)
    eps, C_all = prob.semicanonical(C, F)
    C = C_all[:, :n]
    return ScfState(
        C, D, energy, len(history), history, eps, True, include_pin,
        s_spectrum=prob.spectrum, lowest_hessian_eigenvalue=lowest,
    )


def _stage_summary(state: ScfState) -> dict:
    return {
        "energy": state.energy,
        "iterations": state.iteration,
        "converged": state.converged,
        "lowest_hessian_eigenvalue": state.lowest_hessian_eigenvalue,
    }


def two_stage_protocol(
    tables_factory: Callable[[float], IntegralTables] | IntegralTables,
    opts: ScfOptions | None = None,
    n_electrons: int | None = None,
) -> ScfState:
    """Pinned SCF, then unpinned SCF seeded with the pinned density.

    ``tables_factory(pin_charge)`` builds the integral tables; an
    ``IntegralTables`` that already carries ``Vpin`` may be passed instead.
    With ``opts.pin_charge == 0`` the first stage is skipped.  The returned
    state is the unpinned one; ``state.stages`` records both runs.
    """
    opts = opts or ScfOptions()
    if isinstance(tables_factory, IntegralTables):
        tables = tables_factory
    else:
        tables = tables_factory(opts.pin_charge)

    stages = {}
    initial = None
    if opts.pin_charge > 0:
        if tables.Vpin is None:
            raise ValueError("tables carry no pinning potential")
        try:
            pinned = scf_solve(tables, opts, include_pin=True, n_electrons=n_electrons)
        except NotConverged as exc:
            exc.stage = "pinned"
            raise
        stages["pinned"] = _stage_summary(pinned)
        initial = pinned.density
    try:
        final = scf_solve(tables, opts, initial=initial, include_pin=False, n_electrons=n_electrons)
    except NotConverged as exc:
        exc.stage = "free"
        raise
    stages["free"] = _stage_summary(final)
    final.stages = stages
    return final


def state_invariants(state: ScfState, S: np.ndarray) -> dict:
    """Deviations from orthonormality, electron count and S-metric idempotency."""
    C, D = state.coeffs, state.density
    n = C.shape[1]
    return {
        "orthonormality": float(np.max(np.abs(C.T @ S @ C - np.eye(n)))),
        "trace": float(abs(np.trace(D @ S) - n)),
        "idempotency": float(np.max(np.abs(D @ S @ D - D))),
    }
