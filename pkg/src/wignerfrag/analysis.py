"""Real-space analysis of converged densities.

Peaks of the electron density mark where the electrons localize.  They
are compared with classical equilibrium positions, checked for hexagonal
order, and grouped into classes of (nearly) identical shape.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.optimize import linear_sum_assignment, minimize
from scipy.sparse.csgraph import connected_components

from .basis import BasisSet, evaluate_on_grid
from .classical import Configuration, point_group
from .errors import CountMismatch, NormalizationDrift, PeakCountMismatch, TooFewPeaks
from .integrals import QuadratureGrid, default_grid
from .torus import TorusCell, TorusPoint, squared_distance

log = logging.getLogger(__name__)


class Peak(NamedTuple):
    x: float
    y: float
    height: float

    @property
    def point(self) -> TorusPoint:
        return TorusPoint(self.x, self.y)


@dataclass
class DensityGrid:
    """Electron density sampled at ``(a lx/mx, b ly/my)``, values indexed ``[a, b]``."""

    values: np.ndarray
    cell: TorusCell
    normalization: float = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("density values must be a 2D array")
        self.normalization = self.integral()

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def spacing(self) -> tuple[float, float]:
        mx, my = self.shape
        return self.cell.lx / mx, self.cell.ly / my

    def integral(self) -> float:
        hx, hy = self.spacing
        return float(self.values.sum() * hx * hy)

    def coordinates(self) -> np.ndarray:
        """(mx, my, 2) grid point coordinates."""
        mx, my = self.shape
        hx, hy = self.spacing
        a, b = np.meshgrid(np.arange(mx) * hx, np.arange(my) * hy, indexing="ij")
        return np.stack([a, b], axis=-1)


def density_from_state(state, basis: BasisSet, grid: QuadratureGrid | None = None, tol: float = 1e-4) -> DensityGrid:
    """``n(r) = sum_ij D_ij g_i(r) g_j(r)`` on ``grid``.

    The electron count is checked, not rescaled; a drift above ``tol``
    means the integrals and the SCF state disagree.
    """
    grid = grid or default_grid(basis)
    amps = evaluate_on_grid(basis, grid.mx, grid.my).reshape(basis.size, -1)
    D = state.density
    values = np.einsum("iq,iq->q", D @ amps, amps).reshape(grid.mx, grid.my)
    dens = DensityGrid(values, basis.cell)
    n = state.n_electrons
    if abs(dens.normalization - n) > tol:
        raise NormalizationDrift(f"density integrates to {dens.normalization:.8f}, expected {n}")
    return dens


# 3x3 neighbourhood design matrix for f = c0 + c1 u + c2 v + c3 u^2 + c4 uv + c5 v^2
_U, _V = np.meshgrid([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], indexing="ij")
_U, _V = _U.ravel(), _V.ravel()
_DESIGN = np.stack([np.ones(9), _U, _V, _U**2, _U * _V, _V**2], axis=1)
_FIT = np.linalg.pinv(_DESIGN)


def _refine(values, a, b):
    """Sub-grid maximum from a quadratic fit to log values on the toroidal 3x3 patch.

    Returns the offset in grid units and the fitted peak value.  Falls back
    to the grid point when the fit is not a proper maximum.
    """
    mx, my = values.shape
    patch = values[np.ix_([(a - 1) % mx, a, (a + 1) % mx], [(b - 1) % my, b, (b + 1) % my])]
    if np.all(patch > 0):
        f = np.log(patch.ravel())
        log_scale = True
    else:
        f = patch.ravel()
        log_scale = False
    c = _FIT @ f
    hess = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    if np.all(np.linalg.eigvalsh(hess) < 0):
        off = np.linalg.solve(hess, -c[1:3])
        if np.all(np.abs(off) <= 1.0):
            u, v = off
            top = c[0] + c[1] * u + c[2] * v + c[3] * u * u + c[4] * u * v + c[5] * v * v
            return off, float(np.exp(top) if log_scale else top)
    return np.zeros(2), float(values[a, b])


def find_peaks(density: DensityGrid, expected: int, threshold: float = 0.1, refine: bool = True) -> list[Peak]:
    """Local maxima above ``threshold`` times the global maximum.

    Raises PeakCountMismatch unless exactly ``expected`` peaks are found.
    """
    if expected < 1:
        raise ValueError("expected peak count must be >= 1")
    n = density.values
    top = n.max()
    if not top > 0:
        raise PeakCountMismatch(0, expected)
    is_max = (n >= maximum_filter(n, size=3, mode="wrap")) & (n > threshold * top)
    # a flat plateau is a single non-strict maximum spread over many points
    if np.ptp(n) <= 1e-12 * top:
        is_max[:] = False
    hx, hy = density.spacing
    peaks = []
    for a, b in np.argwhere(is_max):
        if refine:
            off, height = _refine(n, a, b)
        else:
            off, height = np.zeros(2), float(n[a, b])
        x, y = density.cell.reduce([(a + off[0]) * hx, (b + off[1]) * hy])
        peaks.append(Peak(float(x), float(y), height))
    peaks = _merge_plateaus(peaks, density.cell, min(hx, hy))
    if len(peaks) != expected:
        raise PeakCountMismatch(len(peaks), expected)
    return sorted(peaks, key=lambda p: -p.height)


def _merge_plateaus(peaks, cell, h):
    """Drop maxima lying within one grid step of a higher one (ties on a plateau)."""
    kept = []
    for p in sorted(peaks, key=lambda p: -p.height):
        if all(np.hypot(*cell.minimum_image([p.x - q.x, p.y - q.y])) > 1.01 * h for q in kept):
            kept.append(p)
    return kept


def _as_xy(points) -> np.ndarray:
    if isinstance(points, Configuration):
        return points.positions
    return np.array([[p[0], p[1]] for p in points], dtype=float).reshape(-1, 2)


def _assigned_rms(a, b, cell):
    cost = squared_distance(a[:, None, :], b[None, :, :], cell)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean())), cols


def match_to_classical(peaks, oracle, cell: TorusCell) -> float:
    """RMS renormalized distance between peaks and classical positions.

    Minimized over optimal assignment, the cell point group and global
    translations.  Each trial alignment puts one peak on the first oracle
    site, alternates assignment with the mean minimum-image shift, and is
    polished by a local search over the translation.
    """
    a = _as_xy(peaks)
    b = _as_xy(oracle)
    if len(a) != len(b):
        raise CountMismatch(f"{len(a)} peaks against {len(b)} classical positions")
    best = np.inf
    for op in point_group(cell):
        ga = a @ op.T
        for j in range(len(ga)):
            shift = b[0] - ga[j]
            for _ in range(10):
                _, cols = _assigned_rms(ga + shift, b, cell)
                step = cell.minimum_image(b[cols] - (ga + shift)).mean(axis=0)
                shift = shift + step
                if np.hypot(*step) < 1e-12 * cell.rs:
                    break
            rms, _ = _assigned_rms(ga + shift, b, cell)
            if rms < best + 1e-3 * cell.rs:
                res = minimize(lambda t: _assigned_rms(ga + t, b, cell)[0], shift, method="Nelder-Mead",
                               options={"xatol": 1e-10 * cell.rs, "fatol": 1e-14 * cell.rs})
                rms = min(rms, float(res.fun))
            best = min(best, rms)
    return best


def _neighbor_shells(xy, cell, k):
    """Displacements to the ``k`` nearest neighbours of every site, periodic images included."""
    images = np.array([[i * cell.lx, j * cell.ly] for i in (-1, 0, 1) for j in (-1, 0, 1)])
    out = []
    for p in xy:
        d = cell.minimum_image(xy - p)
        cand = (d[:, None, :] + images[None, :, :]).reshape(-1, 2)
        r = np.hypot(cand[:, 0], cand[:, 1])
        keep = r > 1e-9 * cell.rs
        cand, r = cand[keep], r[keep]
        theta = np.mod(np.arctan2(cand[:, 1], cand[:, 0]), 2 * np.pi)
        # ties in distance are broken by bond angle so the choice is deterministic
        order = np.lexsort((theta, np.round(r / cell.rs, 9)))
        out.append(cand[order[:k]])
    return np.array(out)


def hexagonal_order(peaks, cell: TorusCell) -> tuple[float, float]:
    """``(|psi6|, cv)`` from the six nearest neighbours of every site.

    ``psi6`` is the site average of ``|(1/6) sum_k exp(6 i theta_k)|`` and
    ``cv`` the coefficient of variation of all nearest-neighbour bond lengths.
    """
    xy = _as_xy(peaks)
    if len(xy) < 7:
        raise TooFewPeaks(f"hexagonal order needs at least 7 sites, got {len(xy)}")
    bonds = _neighbor_shells(xy, cell, 6)
    theta = np.arctan2(bonds[..., 1], bonds[..., 0])
    local = np.abs(np.exp(6j * theta).mean(axis=1))
    r = np.hypot(bonds[..., 0], bonds[..., 1]).ravel()
    return float(local.mean()), float(r.std() / r.mean())


def peak_features(density: DensityGrid, peaks) -> np.ndarray:
    """Height and second-moment eigenvalues of the density around each peak.

    The patch is a disk of radius half the shortest peak separation, so all
    peaks are measured over the same area.
    """
    xy = _as_xy(peaks)
    heights = np.array([p.height if isinstance(p, Peak) else np.nan for p in peaks])
    cell = density.cell
    coords = density.coordinates().reshape(-1, 2)
    n = density.values.ravel()
    if len(xy) > 1:
        sep = np.hypot(*np.moveaxis(cell.minimum_image(xy[:, None, :] - xy[None, :, :]), -1, 0))
        sep[np.diag_indices(len(xy))] = np.inf
        radius = 0.5 * sep.min()
    else:
        radius = 0.25 * min(cell.lx, cell.ly)
    feats = []
    for p, h in zip(xy, heights):
        d = cell.minimum_image(coords - p)
        inside = np.hypot(d[:, 0], d[:, 1]) <= radius
        w = n[inside]
        dd = d[inside]
        mom = (dd * w[:, None]).T @ dd / w.sum()
        ev = np.linalg.eigvalsh(mom)
        if np.isnan(h):
            h = n[np.argmin(np.hypot(d[:, 0], d[:, 1]))]
        feats.append([h, ev[0], ev[1]])
    return np.array(feats)


def inequivalence_classes(density: DensityGrid, peaks, tol: float = 0.02) -> int:
    """Number of peak classes with features equal to relative tolerance ``tol``.

    Two peaks are linked when every feature differs by at most ``tol``
    relative to the larger of the two values; classes are the connected
    components (single linkage).
    """
    if not tol >= 0:
        raise ValueError("tol must be non-negative")
    f = peak_features(density, peaks)
    a, b = f[:, None, :], f[None, :, :]
    rel = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    linked = np.max(rel, axis=-1) <= tol
    count, _ = connected_components(linked, directed=False)
    return int(count)


@dataclass
class LatticeReport:
    peaks: list
    matched_rms: float | None = None
    psi6: float | None = None
    neighbor_distance_cv: float | None = None
    inequivalence_classes: int | None = None

    def to_dict(self) -> dict:
        return {
            "peaks": [
                {"x": float(p[0]), "y": float(p[1]), **({"height": float(p.height)} if isinstance(p, Peak) else {})}
                for p in self.peaks
            ],
            "matched_rms": self.matched_rms,
            "psi6": self.psi6,
            "neighbor_distance_cv": self.neighbor_distance_cv,
            "inequivalence_classes": self.inequivalence_classes,
        }


def analyze_density(density: DensityGrid, expected: int, oracle=None, tol: float = 0.02,
                    threshold: float = 0.1) -> LatticeReport:
    """Peaks, classical match (if ``oracle`` is given), hexagonal order and classes."""
    peaks = find_peaks(density, expected, threshold=threshold)
    report = LatticeReport(peaks)
    if oracle is not None:
        report.matched_rms = match_to_classical(peaks, oracle, density.cell)
    if len(peaks) >= 7:
        report.psi6, report.neighbor_distance_cv = hexagonal_order(peaks, density.cell)
    report.inequivalence_classes = inequivalence_classes(density, peaks, tol)
    return report


def analyze_configuration(config: Configuration, cell: TorusCell) -> LatticeReport:
    """Hexagonal order of classical point positions."""
    pts = [TorusPoint(*p) for p in config.positions]
    report = LatticeReport(pts)
    if config.n >= 7:
        report.psi6, report.neighbor_distance_cv = hexagonal_order(config, cell)
    return report
