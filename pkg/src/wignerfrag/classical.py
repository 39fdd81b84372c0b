"""Classical Wigner fragments: point charges on the Clifford torus.

The energy is the bare pair sum ``U = sum_{i<j} 1 / r_ij`` with ``r_ij``
the renormalized distance; no neutralizing background is added.  Minima
are located with a Polak-Ribiere+ conjugate-gradient descent from random
starts and grouped into classes that are equivalent under translation,
the point group of the cell and relabeling of the particles.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import CoincidentPoints, NotConverged
from .torus import TorusCell

log = logging.getLogger(__name__)


@dataclass
class Configuration:
    positions: np.ndarray
    energy: float | None = None

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float).reshape(-1, 2)

    @property
    def n(self) -> int:
        return len(self.positions)


@dataclass
class MinimizerOptions:
    tol: float = 1e-10
    max_iter: int = 10_000
    armijo_c: float = 1e-4
    shrink: float = 0.5
    restart_every: int | None = None  # default 2N


@dataclass
class MinimizationResult:
    best: Configuration
    all_minima: list  # [(energy, Configuration)] one per equivalence class, ascending
    starts: int
    converged_count: int
    multiplicity: list = field(default_factory=list)
    raw: list = field(default_factory=list)  # every converged Configuration, in start order


def _pair_terms(x, cell):
    """Pairwise sines and squared chord lengths, shape (N, N)."""
    d = x[:, None, :] - x[None, :, :]
    ax = np.pi * d[..., 0] / cell.lx
    ay = np.pi * d[..., 1] / cell.ly
    q = (cell.lx * np.sin(ax)) ** 2 + (cell.ly * np.sin(ay)) ** 2
    return ax, ay, q


def _check_coincident(q, cell):
    n = q.shape[0]
    off = q[~np.eye(n, dtype=bool)]
    # periodic images coincide only up to rounding in sin(pi k)
    if np.any(off <= (1e-13 * max(cell.lx, cell.ly)) ** 2):
        raise CoincidentPoints("two charges share a position")


def classical_energy(config, cell: TorusCell) -> float:
    x = _positions(config)
    if len(x) < 2:
        return 0.0
    _, _, q = _pair_terms(x, cell)
    _check_coincident(q, cell)
    iu = np.triu_indices(len(x), 1)
    return float(np.sum(np.pi / np.sqrt(q[iu])))


def classical_gradient(config, cell: TorusCell) -> np.ndarray:
    """Analytic dU/d(x_i, y_i) as an (N, 2) array."""
    x = _positions(config)
    n = len(x)
    if n < 2:
        return np.zeros((n, 2))
    ax, ay, q = _pair_terms(x, cell)
    _check_coincident(q, cell)
    np.fill_diagonal(q, 1.0)
    # d(pi/sqrt(q))/dx_i = -pi/2 q^{-3/2} dq/dx_i ;  dq/dx_i = pi lx sin(2 ax)
    pref = -0.5 * np.pi**2 * q**-1.5
    np.fill_diagonal(pref, 0.0)
    gx = np.sum(pref * cell.lx * np.sin(2 * ax), axis=1)
    gy = np.sum(pref * cell.ly * np.sin(2 * ay), axis=1)
    return np.stack([gx, gy], axis=1)


def energy_change(config, step, cell: TorusCell) -> float:
    """``U(x + step) - U(x)`` without cancellation against the absolute energy.

    Uses ``sin^2 a - sin^2 b = sin(a - b) sin(a + b)`` so the difference is
    accurate to relative precision even when it is ~1e-16 of ``U``.
    """
    x = _positions(config)
    step = np.asarray(step, dtype=float).reshape(-1, 2)
    n = len(x)
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, 1)
    d0 = (x[:, None, :] - x[None, :, :])[iu]
    dd = (step[:, None, :] - step[None, :, :])[iu]
    lens = np.array([cell.lx, cell.ly])
    a0 = np.pi * d0 / lens
    a1 = np.pi * (d0 + dd) / lens
    diff = np.sin(np.pi * dd / lens) * np.sin(a0 + a1)  # sin^2 a1 - sin^2 a0
    dq = np.sum(lens**2 * diff, axis=1)
    q0 = np.sum((lens * np.sin(a0)) ** 2, axis=1)
    q1 = np.sum((lens * np.sin(a1)) ** 2, axis=1)
    if np.any(q1 == 0.0):
        raise CoincidentPoints("step makes two charges coincide")
    s0, s1 = np.sqrt(q0), np.sqrt(q1)
    # pi/s1 - pi/s0 = pi (s0 - s1) / (s0 s1) = -pi dq / (s0 s1 (s0 + s1))
    return float(-np.pi * np.sum(dq / (s0 * s1 * (s0 + s1))))


def _positions(config):
    if isinstance(config, Configuration):
        return config.positions
    return np.asarray(config, dtype=float).reshape(-1, 2)


def gauge_fix(positions, cell: TorusCell) -> np.ndarray:
    """Translate so particle 0 sits at the origin, then reduce into the cell."""
    positions = np.asarray(positions, dtype=float)
    return cell.reduce(positions - positions[0])


def minimize(start, cell: TorusCell, opts: MinimizerOptions | None = None) -> Configuration:
    """Polak-Ribiere+ conjugate gradient with Armijo backtracking.

    The trial step along each search direction comes from a secant estimate
    of the curvature, so on near-quadratic stretches the line search is
    almost exact and the first Armijo trial is accepted.

    Raises NotConverged (with ``best`` set) after ``opts.max_iter`` steps.
    """
    opts = opts or MinimizerOptions()
    x = cell.reduce(_positions(start)).copy()
    n = len(x)
    if n < 2:
        return Configuration(gauge_fix(x, cell), 0.0)
    restart = opts.restart_every or 2 * n
    lmin = min(cell.lx, cell.ly)

    g = classical_gradient(x, cell)
    d = -g
    since_restart = 0
    prev_alpha = None
    for it in range(opts.max_iter):
        if np.max(np.abs(g)) < opts.tol:
            break
        gd = float(np.vdot(g, d))
        if gd >= 0 or since_restart >= restart:
            d = -g
            gd = -float(np.vdot(g, g))
            since_restart = 0

        dmax = np.max(np.abs(d))
        eps = 1e-7 * lmin / dmax
        curv = float(np.vdot(classical_gradient(x + eps * d, cell) - g, d)) / eps
        if curv > 0:
            alpha = -gd / curv
        elif prev_alpha is not None:
            alpha = 2.0 * prev_alpha
        else:
            alpha = 0.05 * lmin / dmax
        # never move a charge by more than a quarter cell in one step
        alpha = min(alpha, 0.25 * lmin / dmax)

        while True:
            try:
                du = energy_change(x, alpha * d, cell)
            except CoincidentPoints:
                du = np.inf
            if du <= opts.armijo_c * alpha * gd:
                break
            alpha *= opts.shrink
            if alpha * dmax < 1e-15 * lmin:
                break
        if not du <= opts.armijo_c * alpha * gd:
            if since_restart == 0:
                # steepest descent cannot decrease U any further at this precision
                log.debug("line search stalled at |g|=%.3e", np.max(np.abs(g)))
                break
            d = -g
            since_restart = restart
            continue

        x = x + alpha * d
        prev_alpha = alpha
        g_new = classical_gradient(x, cell)
        beta = max(0.0, float(np.vdot(g_new, g_new - g)) / float(np.vdot(g, g)))
        d = -g_new + beta * d
        g = g_new
        since_restart += 1
    else:
        it = opts.max_iter

    x = gauge_fix(x, cell)
    result = Configuration(x, classical_energy(x, cell))
    gmax = np.max(np.abs(classical_gradient(x, cell)))
    if gmax >= opts.tol:
        raise NotConverged(
            f"CG stopped after {it} iterations with max |grad| = {gmax:.3e}", best=result
        )
    return result


def random_configuration(cell: TorusCell, rng, n=None) -> np.ndarray:
    """Uniform i.i.d. positions, redrawn until all pairs are 1e-3 min(L) apart."""
    n = cell.n_electrons if n is None else n
    lmin = min(cell.lx, cell.ly)
    while True:
        x = rng.uniform(0.0, 1.0, size=(n, 2)) * cell.lengths
        if n < 2:
            return x
        d = cell.minimum_image(x[:, None, :] - x[None, :, :])
        r = np.hypot(d[..., 0], d[..., 1])[np.triu_indices(n, 1)]
        if np.all(r > 1e-3 * lmin):
            return cell.reduce(x)


def point_group(cell: TorusCell) -> list:
    """2x2 matrices of the cell's point group about the origin (8 if square, else 4)."""
    ops = [np.diag([sx, sy]).astype(float) for sx in (1, -1) for sy in (1, -1)]
    if cell.is_square:
        swap = np.array([[0.0, 1.0], [1.0, 0.0]])
        ops += [op @ swap for op in ops]
    return ops


def configuration_distance(a, b, cell: TorusCell) -> float:
    """RMS displacement between two configurations modulo symmetry.

    Minimized over the cell point group, translations (by pinning each
    particle of ``a`` onto particle 0 of ``b``) and relabeling (optimal
    assignment on minimum-image distances).
    """
    a = _positions(a)
    b = _positions(b)
    if a.shape != b.shape:
        raise ValueError("configurations differ in particle count")
    best = np.inf
    for op in point_group(cell):
        ga = a @ op.T
        for j in range(len(ga)):
            moved = ga - ga[j] + b[0]
            delta = cell.minimum_image(moved[:, None, :] - b[None, :, :])
            cost = np.sum(delta**2, axis=-1)
            rows, cols = linear_sum_assignment(cost)
            best = min(best, float(np.sqrt(cost[rows, cols].mean())))
    return best


def _run_start(args):
    cell, seed_seq, opts = args
    rng = np.random.default_rng(seed_seq)
    x0 = random_configuration(cell, rng)
    try:
        return minimize(x0, cell, opts)
    except NotConverged as exc:
        log.info("start did not converge: %s", exc)
        return None


def deduplicate(minima, cell: TorusCell, rms_tol=None, energy_rtol=1e-9):
    """Group configurations into symmetry-equivalence classes.

    Returns ``(representatives, counts)`` sorted by ascending energy.
    """
    rms_tol = 1e-5 * min(cell.lx, cell.ly) if rms_tol is None else rms_tol
    ordered = sorted(minima, key=lambda c: c.energy)
    reps: list[Configuration] = []
    counts: list[int] = []
    for conf in ordered:
        for k, rep in enumerate(reps):
            scale = max(abs(rep.energy), abs(conf.energy), 1e-300)
            if abs(rep.energy - conf.energy) > energy_rtol * scale:
                continue
            if configuration_distance(conf, rep, cell) < rms_tol:
                counts[k] += 1
                break
        else:
            reps.append(conf)
            counts.append(1)
    return reps, counts


def multi_start(
    cell: TorusCell,
    n_starts: int,
    seed: int,
    opts: MinimizerOptions | None = None,
    workers: int = 1,
) -> MinimizationResult:
    """Minimize from ``n_starts`` random configurations and classify the minima.

    Each start draws from its own child of ``SeedSequence(seed)``, so the
    result does not depend on ``workers``.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    opts = opts or MinimizerOptions()
    children = np.random.SeedSequence(seed).spawn(n_starts)
    jobs = [(cell, s, opts) for s in children]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            found = list(pool.map(_run_start, jobs))
    else:
        found = [_run_start(j) for j in jobs]
    converged = [c for c in found if c is not None]
    if not converged:
        raise NotConverged(f"none of {n_starts} starts converged")
    reps, counts = deduplicate(converged, cell)
    return MinimizationResult(
        best=reps[0],
        all_minima=[(c.energy, c) for c in reps],
        starts=n_starts,
        converged_count=len(converged),
        multiplicity=counts,
        raw=converged,
    )


def hessian(config, cell: TorusCell, h=None) -> np.ndarray:
    """Central finite-difference Hessian of U from the analytic gradient, (2N, 2N)."""
    x = _positions(config)
    n = len(x)
    h = 1e-5 * min(cell.lx, cell.ly) if h is None else h
    flat = x.ravel()
    H = np.empty((2 * n, 2 * n))
    for k in range(2 * n):
        xp = flat.copy()
        xm = flat.copy()
        xp[k] += h
        xm[k] -= h
        H[:, k] = (classical_gradient(xp, cell) - classical_gradient(xm, cell)).ravel() / (2 * h)
    return 0.5 * (H + H.T)


def reduced_hessian_eigenvalues(config, cell: TorusCell) -> np.ndarray:
    """Hessian spectrum on the subspace orthogonal to the two rigid translations."""
    n = len(_positions(config))
    H = hessian(config, cell)
    trans = np.zeros((2 * n, 2))
    trans[0::2, 0] = 1.0
    trans[1::2, 1] = 1.0
    # complete the basis, then drop the translation columns
    q, _ = np.linalg.qr(np.hstack([trans, np.eye(2 * n)]))
    comp = q[:, 2 : 2 * n]
    return np.linalg.eigvalsh(comp.T @ H @ comp)


def is_local_minimum(config, cell: TorusCell, tol=1e-8) -> bool:
    if len(_positions(config)) < 2:
        return True
    return bool(reduced_hessian_eigenvalues(config, cell).min() >= -tol)
