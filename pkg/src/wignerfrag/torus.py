"""Clifford supercell geometry and the renormalized (chord) distance.

The supercell is a rectangle ``[0, lx) x [0, ly)`` with opposite edges
identified.  Distances between points are measured in the embedding space
of the flat torus::

    r = (1/pi) * sqrt(lx**2 sin^2(pi dx / lx) + ly**2 sin^2(pi dy / ly))

which is smooth and exactly periodic, and reduces to the Euclidean
distance for small separations.

All functions broadcast over numpy arrays whose last axis holds ``(x, y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CoincidentPoints


class TorusPoint(NamedTuple):
    x: float
    y: float


def _reduce(value, length):
    out = np.mod(value, length)
    # np.mod(-tiny, L) rounds to L itself
    return np.where(out >= length, 0.0, out)


@dataclass(frozen=True)
class TorusCell:
    """Rectangular Clifford supercell holding ``n_electrons`` at density ``1/(pi rs^2)``."""

    lx: float
    ly: float
    n_electrons: int = 1
    rs: float | None = None

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"cell edges must be positive, got lx={self.lx}, ly={self.ly}")
        if self.n_electrons < 1:
            raise ValueError("n_electrons must be >= 1")
        if self.rs is None:
            rs = math.sqrt(self.lx * self.ly / (self.n_electrons * math.pi))
            object.__setattr__(self, "rs", rs)

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def lengths(self) -> np.ndarray:
        return np.array([self.lx, self.ly])

    @property
    def is_square(self) -> bool:
        return math.isclose(self.lx, self.ly, rel_tol=1e-12)

    def reduce(self, xy):
        """Map coordinates (last axis = x, y) into ``[0, lx) x [0, ly)``."""
        xy = np.asarray(xy, dtype=float)
        out = np.empty_like(xy)
        out[..., 0] = _reduce(xy[..., 0], self.lx)
        out[..., 1] = _reduce(xy[..., 1], self.ly)
        return out

    def point(self, x: float, y: float) -> TorusPoint:
        return TorusPoint(*(float(v) for v in self.reduce([x, y])))

    def minimum_image(self, delta):
        """Displacement(s) folded into ``[-l/2, l/2)`` along each axis."""
        delta = np.asarray(delta, dtype=float)
        lengths = self.lengths
        return delta - lengths * np.floor(delta / lengths + 0.5)

    def to_dict(self) -> dict:
        return {"lx": self.lx, "ly": self.ly, "n_electrons": self.n_electrons, "rs": self.rs}


def cell_from_rs(rs: float, n_electrons: int, aspect: float = 1.0) -> TorusCell:
    """Cell with ``lx * ly = n pi rs^2`` and ``ly / lx = aspect``."""
    if not rs > 0:
        raise ValueError(f"rs must be positive, got {rs}")
    if n_electrons < 1:
        raise ValueError(f"n_electrons must be >= 1, got {n_electrons}")
    if not (aspect > 0 and math.isfinite(aspect)):
        raise ValueError(f"aspect ratio ly/lx must be positive and finite, got {aspect}")
    area = n_electrons * math.pi * rs * rs
    lx = math.sqrt(area / aspect)
    return TorusCell(lx=lx, ly=aspect * lx, n_electrons=n_electrons, rs=float(rs))


def squared_distance(a, b, cell: TorusCell):
    """Square of the renormalized distance; cheaper and smooth everywhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    sx = np.sin(np.pi * (a[..., 0] - b[..., 0]) / cell.lx)
    sy = np.sin(np.pi * (a[..., 1] - b[..., 1]) / cell.ly)
    return ((cell.lx * sx) ** 2 + (cell.ly * sy) ** 2) / np.pi**2


def renormalized_distance(a, b, cell: TorusCell):
    return np.sqrt(squared_distance(a, b, cell))


def max_distance(cell: TorusCell) -> float:
    return math.hypot(cell.lx, cell.ly) / math.pi


def distance_gradient(a, b, cell: TorusCell):
    """Gradient of ``r(a, b)`` with respect to the coordinates of ``a``.

    Raises CoincidentPoints where ``r == 0``; the caller should perturb.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = renormalized_distance(a, b, cell)
    if np.any(r == 0.0):
        raise CoincidentPoints("distance gradient undefined at coincident points")
    dx = a[..., 0] - b[..., 0]
    dy = a[..., 1] - b[..., 1]
    gx = cell.lx * np.sin(2 * np.pi * dx / cell.lx) / (2 * np.pi * r)
    gy = cell.ly * np.sin(2 * np.pi * dy / cell.ly) / (2 * np.pi * r)
    return np.stack([gx, gy], axis=-1)
