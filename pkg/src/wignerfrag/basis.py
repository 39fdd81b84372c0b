"""Regular grid of periodic gaussians on the Clifford supercell.

Each function is ``g_i(p) = exp(-alpha d(p, c_i)^2)`` with ``d`` the
renormalized distance, so it is exactly periodic and smooth.  Because
``d^2`` splits into an x part and a y part, every gaussian factorizes into
``gx(x) * gy(y)``; the integral code relies on this.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .torus import TorusCell, squared_distance


@dataclass(frozen=True)
class BasisSet:
    cell: TorusCell
    nx: int
    ny: int
    xi: float
    alpha: float
    centers: np.ndarray  # (P, 2), index = ix * ny + iy

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def spacing(self) -> tuple[float, float]:
        return self.cell.lx / self.nx, self.cell.ly / self.ny

    @property
    def delta(self) -> float:
        return min(self.spacing)

    def index(self, ix: int, iy: int) -> int:
        return (ix % self.nx) * self.ny + (iy % self.ny)

    def grid_indices(self) -> np.ndarray:
        """(P, 2) integer grid coordinates of each function."""
        ix, iy = np.divmod(np.arange(self.size), self.ny)
        return np.stack([ix, iy], axis=1)

    def descriptor(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "xi": self.xi}


def build_basis(cell: TorusCell, nx: int, ny: int, xi: float = 0.8) -> BasisSet:
    """Gaussians centred at ``((i + 1/2) lx/nx, (j + 1/2) ly/ny)`` with ``alpha = xi / delta^2``.

    ``delta`` is the smaller of the two grid spacings.
    """
    if nx < 2 or ny < 2:
        raise ValueError(f"basis grid must be at least 2x2, got {nx}x{ny}")
    if not xi > 0:
        raise ValueError(f"xi must be positive, got {xi}")
    dx, dy = cell.lx / nx, cell.ly / ny
    delta = min(dx, dy)
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    centers = np.stack([(ix.ravel() + 0.5) * dx, (iy.ravel() + 0.5) * dy], axis=1)
    return BasisSet(cell, nx, ny, float(xi), float(xi) / delta**2, centers)


def evaluate_basis(basis: BasisSet, points) -> np.ndarray:
    """Amplitudes ``g_i(p_q)`` as a (P, Q) matrix."""
    pts = basis.cell.reduce(np.asarray(points, dtype=float).reshape(-1, 2))
    d2 = squared_distance(basis.centers[:, None, :], pts[None, :, :], basis.cell)
    return np.exp(-basis.alpha * d2)


def axis_factors(basis: BasisSet, mx: int, my: int):
    """1D factors of every gaussian on a uniform ``mx x my`` grid.

    Returns ``(fx, dfx, fy, dfy)``: ``fx[i, a] = gx_i(a * lx / mx)`` for the
    ``nx`` distinct x-centres, ``dfx`` its x-derivative, likewise for y.
    """
    cell = basis.cell
    out = []
    for n, length, m in ((basis.nx, cell.lx, mx), (basis.ny, cell.ly, my)):
        centres = (np.arange(n) + 0.5) * length / n
        pts = np.arange(m) * length / m
        u = pts[None, :] - centres[:, None]
        f = np.exp(-basis.alpha * (length / np.pi) ** 2 * np.sin(np.pi * u / length) ** 2)
        df = -basis.alpha * (length / np.pi) * np.sin(2 * np.pi * u / length) * f
        out += [f, df]
    return tuple(out)


def evaluate_on_grid(basis: BasisSet, mx: int, my: int) -> np.ndarray:
    """All basis functions on the uniform grid, shape (P, mx, my)."""
    fx, _, fy, _ = axis_factors(basis, mx, my)
    return np.einsum("ia,jb->ijab", fx, fy).reshape(basis.size, mx, my)
