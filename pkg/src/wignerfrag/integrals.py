"""One- and two-electron integrals over the periodic gaussian basis.

Everything is evaluated on a uniform ``mx x my`` grid.  The integrands are
smooth and periodic, so the rectangle rule converges spectrally.  The only
singular object is the Coulomb kernel ``v(r) = 1/d(r, 0)``; it enters
through its Fourier coefficients, and convolutions are done with FFTs:

    (v * f)(r) = A * ifft2(vhat * fft2(f))

Two kernels are available:

``"spectral"`` (default)
    The Fourier coefficients of ``v`` itself, computed to ~1e-13 by
    splitting ``v = erf(b d)/d + erfc(b d)/d``.  The smooth first part is
    transformed with a fine FFT; the second is confined to a disc around
    the origin and integrated in polar coordinates, where the ``1/r``
    singularity cancels against the Jacobian.  Convolutions of band-limited
    densities are then exact up to aliasing.

``"sampled"``
    Grid samples of ``v`` with the origin replaced by the mean of ``1/d``
    over one grid cell.  This is the plain rectangle rule; its error is
    first order in the grid spacing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.special import erf, erfc

from .basis import BasisSet, axis_factors, build_basis, evaluate_on_grid
from .errors import GridTooCoarse
from .torus import TorusCell, renormalized_distance

log = logging.getLogger(__name__)

KERNELS = ("spectral", "sampled")


@dataclass(frozen=True)
class QuadratureGrid:
    cell: TorusCell
    mx: int
    my: int

    def __post_init__(self):
        if self.mx < 4 or self.my < 4:
            raise ValueError("quadrature grid needs at least 4 points per axis")

    @property
    def hx(self) -> float:
        return self.cell.lx / self.mx

    @property
    def hy(self) -> float:
        return self.cell.ly / self.my

    @property
    def weight(self) -> float:
        return self.cell.area / (self.mx * self.my)

    def points(self) -> np.ndarray:
        """(mx, my, 2) coordinates, row-major in x."""
        x = np.arange(self.mx) * self.hx
        y = np.arange(self.my) * self.hy
        return np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)

    def doubled(self) -> "QuadratureGrid":
        return QuadratureGrid(self.cell, 2 * self.mx, 2 * self.my)

    def to_dict(self) -> dict:
        return {"mx": self.mx, "my": self.my}


def default_grid(basis: BasisSet, factor: int = 4) -> QuadratureGrid:
    m = factor * max(basis.nx, basis.ny)
    return QuadratureGrid(basis.cell, m, m)


# -- one-electron integrals ---------------------------------------------------


def _axis_matrices(basis, grid):
    fx, dfx, fy, dfy = axis_factors(basis, grid.mx, grid.my)
    sx = grid.hx * fx @ fx.T
    tx = grid.hx * dfx @ dfx.T
    sy = grid.hy * fy @ fy.T
    ty = grid.hy * dfy @ dfy.T
    return sx, tx, sy, ty


def overlap_and_kinetic(basis: BasisSet, grid: QuadratureGrid, self_check: bool = False):
    """Overlap ``S`` and kinetic ``T = 1/2 <grad g_i | grad g_j>``.

    The tensor-product rectangle rule factorizes exactly over the separable
    gaussians, so both matrices are Kronecker products of 1D quadratures.
    """
    sx, tx, sy, ty = _axis_matrices(basis, grid)
    S = np.kron(sx, sy)
    T = 0.5 * (np.kron(tx, sy) + np.kron(sx, ty))
    S = 0.5 * (S + S.T)
    T = 0.5 * (T + T.T)
    if self_check:
        S2, _ = overlap_and_kinetic(basis, grid.doubled())
        err = np.max(np.abs(S2 - S))
        if err > 1e-9:
            raise GridTooCoarse(f"overlap changes by {err:.2e} when the grid is doubled")
    return S, T


# -- Coulomb kernel -----------------------------------------------------------


def _mode_numbers(m):
    return np.fft.fftfreq(m, 1.0 / m).round().astype(int)


def _min_distance_on_circle(cell, radius):
    theta = np.linspace(0.0, 0.5 * np.pi, 2001)
    pts = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return float(renormalized_distance(pts, np.zeros(2), cell).min())


def _spectral_coefficients(cell: TorusCell, mx: int, my: int, beta=None, quad_scale=1.0):
    """Fourier coefficients of 1/d for modes |m| <= m/2, in FFT layout."""
    lmin = min(cell.lx, cell.ly)
    radius = 0.5 * lmin
    if beta is None:
        beta = 6.5 / _min_distance_on_circle(cell, radius)

    # smooth part erf(b d)/d on a fine grid; pad until aliased modes are < e^-45
    coeffs = []
    for m, length in ((mx, cell.lx), (my, cell.ly)):
        pad = int(math.ceil(math.sqrt(45.0) * beta * length / math.pi)) + 2
        coeffs.append(2 * (m // 2 + pad))
    mfx, mfy = coeffs
    x = np.arange(mfx) * cell.lx / mfx
    y = np.arange(mfy) * cell.ly / mfy
    X, Y = np.meshgrid(x, y, indexing="ij")
    d = renormalized_distance(np.stack([X, Y], axis=-1), np.zeros(2), cell)
    smooth = np.full_like(d, 2 * beta / math.sqrt(math.pi))
    nz = d > 0
    smooth[nz] = erf(beta * d[nz]) / d[nz]
    fine = scipy.fft.fft2(smooth).real / (mfx * mfy)
    kx = np.abs(_mode_numbers(mx))
    ky = np.abs(_mode_numbers(my))
    long_part = fine[np.ix_(kx, ky)]

    # short-range part erfc(b d)/d on the disc |r| < radius, polar coordinates
    kmax = math.pi * max(mx / cell.lx, my / cell.ly)
    kr = kmax * radius
    n_rho = int(quad_scale * (0.8 * kr + 64))
    n_theta = int(quad_scale * (2.2 * kr + 96))
    t, w = np.polynomial.legendre.leggauss(n_rho)
    rho = 0.5 * radius * (t + 1.0)
    w_rho = 0.5 * radius * w
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    R, TH = np.meshgrid(rho, theta, indexing="ij")
    px = (R * np.cos(TH)).ravel()
    py = (R * np.sin(TH)).ravel()
    dq = renormalized_distance(np.stack([px, py], axis=-1), np.zeros(2), cell)
    fq = erfc(beta * dq) / dq * (R.ravel() * np.repeat(w_rho, n_theta)) * (2 * np.pi / n_theta)
    ux = 2 * np.pi * np.arange(mx // 2 + 1) / cell.lx
    uy = 2 * np.pi * np.arange(my // 2 + 1) / cell.ly
    # integrand is even in x and in y, so only cos*cos survives
    short = (np.cos(np.outer(ux, px)) * fq) @ np.cos(np.outer(uy, py)).T / cell.area
    return long_part + short[np.ix_(kx, ky)]


def cell_average_inverse_distance(cell: TorusCell, hx: float, hy: float) -> float:
    """Mean of ``1/d`` over the rectangle ``[-hx/2, hx/2] x [-hy/2, hy/2]``.

    Closed form for the Euclidean ``1/r`` plus a Gauss-Legendre correction
    for the bounded remainder ``1/d - 1/r``.
    """
    a, b = 0.5 * hx, 0.5 * hy
    euclid = 4.0 * (a * math.asinh(b / a) + b * math.asinh(a / b))
    t, w = np.polynomial.legendre.leggauss(32)
    xs = 0.5 * a * (t + 1)
    ys = 0.5 * b * (t + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    W = np.outer(0.5 * a * w, 0.5 * b * w)
    d = renormalized_distance(np.stack([X, Y], axis=-1), np.zeros(2), cell)
    corr = 4.0 * np.sum(W * (1.0 / d - 1.0 / np.hypot(X, Y)))
    return (euclid + corr) / (hx * hy)


def _sampled_coefficients(cell: TorusCell, mx: int, my: int):
    grid = QuadratureGrid(cell, mx, my)
    d = renormalized_distance(grid.points(), np.zeros(2), cell)
    v = np.empty_like(d)
    v[d > 0] = 1.0 / d[d > 0]
    v[0, 0] = cell_average_inverse_distance(cell, grid.hx, grid.hy)
    return scipy.fft.fft2(v).real / (mx * my)


def coulomb_kernel_fourier(cell: TorusCell, grid: QuadratureGrid, kernel: str = "spectral") -> np.ndarray:
    """Fourier coefficients ``vhat[a, b]`` of ``1/d`` in numpy FFT layout.

    ``v(r) ~ sum_k vhat(k) exp(i k.r)``.  The array is real and even.
    """
    if kernel == "spectral":
        return _spectral_coefficients(cell, grid.mx, grid.my)
    if kernel == "sampled":
        return _sampled_coefficients(cell, grid.mx, grid.my)
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def kernel_real_space(vhat: np.ndarray) -> np.ndarray:
    """Grid values of the kernel represented by ``vhat`` (inverse transform)."""
    return scipy.fft.ifft2(vhat).real * vhat.size


# -- two-electron operator ----------------------------------------------------


class CoulombOperator:
    """The repulsion operator restricted to products of basis functions.

    Holds the basis on the quadrature grid and the kernel coefficients.
    ``(ij|kl) = h^2 sum_r rho_ij(r) (v * rho_kl)(r)`` with
    ``rho_ij = g_i g_j``; the Coulomb and exchange matrices below are exact
    contractions of that same bilinear form.
    """

    def __init__(self, basis: BasisSet, grid: QuadratureGrid, vhat: np.ndarray, workers: int = 1):
        self.basis = basis
        self.grid = grid
        self.vhat = np.asarray(vhat, dtype=float)
        self.workers = workers
        self.amplitudes = evaluate_on_grid(basis, grid.mx, grid.my)
        self._flat = self.amplitudes.reshape(basis.size, -1)
        self._vhat_r = self.vhat[:, : grid.my // 2 + 1]

    @property
    def size(self) -> int:
        return self.basis.size

    def convolve(self, f: np.ndarray) -> np.ndarray:
        """``(v * f)`` on the grid for real ``f`` of shape (..., mx, my)."""
        shape = (self.grid.mx, self.grid.my)
        fk = scipy.fft.rfft2(f, s=shape, workers=self.workers)
        out = scipy.fft.irfft2(fk * self._vhat_r, s=shape, workers=self.workers)
        return self.grid.cell.area * out

    def pair_density(self, i: int, j: int) -> np.ndarray:
        return self.amplitudes[i] * self.amplitudes[j]

    def eri(self, i: int, j: int, k: int, l: int) -> float:
        pot = self.convolve(self.pair_density(k, l))
        return float(self.grid.weight * np.sum(self.pair_density(i, j) * pot))

    def density(self, D: np.ndarray) -> np.ndarray:
        """``n(r) = sum_ij D_ij g_i(r) g_j(r)`` on the grid."""
        G = self._flat
        n = np.einsum("iq,iq->q", D @ G, G)
        return n.reshape(self.grid.mx, self.grid.my)

    def potential_matrix(self, w: np.ndarray) -> np.ndarray:
        """``h^2 sum_r g_i(r) w(r) g_j(r)`` for a grid function ``w``."""
        G = self._flat
        M = self.grid.weight * (G * w.ravel()) @ G.T
        return 0.5 * (M + M.T)

    def coulomb_matrix(self, D: np.ndarray) -> np.ndarray:
        """``J_ij = sum_kl D_kl (ij|kl)``."""
        return self.potential_matrix(self.convolve(self.density(D)))

    def exchange_matrix(self, D: np.ndarray = None, orbitals: np.ndarray = None) -> np.ndarray:
        """``K_ij = sum_kl D_kl (ik|jl)``.

        Pass ``orbitals`` (P x N) when ``D = C C^T`` is known; otherwise ``D``
        is factorized by its eigendecomposition.
        """
        if orbitals is None:
            lam, U = np.linalg.eigh(0.5 * (D + D.T))
            keep = np.abs(lam) > 1e-13 * max(np.abs(lam).max(), 1e-300)
            lam, U = lam[keep], U[:, keep]
        else:
            U = np.asarray(orbitals)
            lam = np.ones(U.shape[1])
        G = self._flat
        shape = (self.size, self.grid.mx, self.grid.my)
        K = np.zeros((self.size, self.size))
        for a in range(U.shape[1]):
            phi = U[:, a] @ G
            W = G * phi
            VW = self.convolve(W.reshape(shape)).reshape(self.size, -1)
            K += lam[a] * self.grid.weight * (W @ VW.T)
        return 0.5 * (K + K.T)

    def pinning_matrix(self, charge: float, site) -> np.ndarray:
        """``-q <g_i | 1/d(r, site) | g_j>``, exact for any (off-grid) site."""
        if charge == 0:
            return np.zeros((self.size, self.size))
        sx, sy = np.asarray(site, dtype=float)
        kx = 2 * np.pi * _mode_numbers(self.grid.mx) / self.grid.cell.lx
        ky = 2 * np.pi * _mode_numbers(self.grid.my) / self.grid.cell.ly
        phase = np.exp(-1j * np.add.outer(kx * sx, ky * sy))
        shifted = scipy.fft.ifft2(self.vhat * phase, workers=self.workers).real * self.vhat.size
        return -charge * self.potential_matrix(shifted)


def pinning_potential(
    basis: BasisSet,
    grid: QuadratureGrid,
    q: float,
    site=(0.0, 0.0),
    kernel: str = "spectral",
    operator: CoulombOperator | None = None,
) -> np.ndarray:
    """Attraction of each basis product to a positive charge ``q`` at ``site``."""
    if q < 0:
        raise ValueError("pinning charge must be non-negative")
    op = operator or CoulombOperator(basis, grid, coulomb_kernel_fourier(basis.cell, grid, kernel))
    return op.pinning_matrix(q, site)


# -- ERI store ----------------------------------------------------------------


@dataclass
class EriStore:
    """Unique ``(ij|kl)`` over canonical pairs ``i <= j`` surviving screening.

    ``values[p, q] = (pair_p | pair_q)``; the matrix is symmetric, so each
    value appears once up to the ``(ij|kl) = (kl|ij)`` transpose.  Quadruples
    whose Schwarz bound is below ``screen_tol`` are stored as exact zeros.
    """

    size: int
    pairs: np.ndarray  # (n_pairs, 2)
    values: np.ndarray  # (n_pairs, n_pairs)
    diagonal: np.ndarray  # (ij|ij) for every canonical pair, screened or not
    screen_tol: float
    index: np.ndarray = field(init=False)

    def __post_init__(self):
        self.index = np.full((self.size, self.size), -1, dtype=np.int64)
        i, j = self.pairs[:, 0], self.pairs[:, 1]
        self.index[i, j] = np.arange(len(self.pairs))
        self.index[j, i] = np.arange(len(self.pairs))

    def __getitem__(self, key) -> float:
        i, j, k, l = key
        p, q = self.index[i, j], self.index[k, l]
        if p < 0 or q < 0:
            return 0.0
        return float(self.values[p, q])

    def dense(self) -> np.ndarray:
        """Full (P, P, P, P) tensor; only sensible for small bases."""
        if self.size > 64:
            raise MemoryError(f"dense ERI tensor for P={self.size} refused; use the pair store")
        P = self.size
        idx = self.index
        full = np.zeros((P, P, P, P))
        valid = idx >= 0
        ij = np.argwhere(valid)
        pij = idx[valid]
        for (i, j), p in zip(ij, pij):
            row = np.zeros((P, P))
            row[valid] = self.values[p, idx[valid]]
            full[i, j] = row
        return full

    def coulomb_matrix(self, D: np.ndarray) -> np.ndarray:
        i, j = self.pairs[:, 0], self.pairs[:, 1]
        dvec = np.where(i == j, 1.0, 2.0) * D[i, j]
        jp = self.values @ dvec
        J = np.zeros((self.size, self.size))
        J[i, j] = jp
        J[j, i] = jp
        return J

    def exchange_matrix(self, D: np.ndarray) -> np.ndarray:
        full = self.dense()
        return np.einsum("ikjl,kl->ij", full, D)


def canonical_pairs(size: int) -> np.ndarray:
    i, j = np.triu_indices(size)
    return np.stack([i, j], axis=1)


def eri_build(
    basis: BasisSet,
    grid: QuadratureGrid,
    screen_tol: float = 1e-10,
    kernel: str = "spectral",
    operator: CoulombOperator | None = None,
    self_check: bool = False,
    max_entries: int = 60_000_000,
    block: int = 512,
) -> EriStore:
    """Screened store of unique two-electron integrals.

    Pair densities are convolved with the kernel by FFT and contracted with
    each other; each unique value is computed once.
    """
    op = operator or CoulombOperator(basis, grid, coulomb_kernel_fourier(basis.cell, grid, kernel))
    pairs = canonical_pairs(basis.size)
    G = op._flat
    shape = (grid.mx, grid.my)

    diag = np.empty(len(pairs))
    for s in range(0, len(pairs), block):
        pp = pairs[s : s + block]
        rho = G[pp[:, 0]] * G[pp[:, 1]]
        pot = op.convolve(rho.reshape(-1, *shape)).reshape(len(pp), -1)
        diag[s : s + block] = grid.weight * np.sum(rho * pot, axis=1)
    if np.any(diag <= 0):
        raise GridTooCoarse("non-positive self-repulsion of a pair density")

    bound = np.sqrt(diag)
    keep = bound * bound.max() >= screen_tol
    kept = pairs[keep]
    kb = bound[keep]
    n = len(kept)
    if n * n > max_entries:
        raise MemoryError(
            f"{n} surviving pairs need {n * n} stored values (> {max_entries}); "
            "use the CoulombOperator contractions instead"
        )
    rho = G[kept[:, 0]] * G[kept[:, 1]]
    values = np.empty((n, n))
    for s in range(0, n, block):
        pot = op.convolve(rho[s : s + block].reshape(-1, *shape)).reshape(-1, G.shape[1])
        values[:, s : s + block] = grid.weight * rho @ pot.T
    values = 0.5 * (values + values.T)
    values[np.outer(kb, kb) < screen_tol] = 0.0

    if self_check:
        _check_eri_resolution(basis, grid, kernel, op)
    return EriStore(basis.size, kept, values, diag, screen_tol)


def _check_eri_resolution(basis, grid, kernel, op):
    fine_grid = grid.doubled()
    fine = CoulombOperator(basis, fine_grid, coulomb_kernel_fourier(basis.cell, fine_grid, kernel))
    j = basis.index(1, 0)
    for quad in ((0, 0, 0, 0), (0, j, 0, j), (0, 0, j, j)):
        a, b = op.eri(*quad), fine.eri(*quad)
        if abs(a - b) > 1e-9 * max(abs(b), 1e-12):
            raise GridTooCoarse(f"ERI {quad} changes from {a:.12e} to {b:.12e} on a doubled grid")


# -- tables -------------------------------------------------------------------


@dataclass
class IntegralTables:
    basis: BasisSet
    grid: QuadratureGrid
    S: np.ndarray
    T: np.ndarray
    coulomb: CoulombOperator
    Vpin: np.ndarray | None = None
    pin_charge: float = 0.0
    pin_site: tuple = (0.0, 0.0)
    eri: EriStore | None = None
    kernel: str = "spectral"
    screen_tol: float = 1e-10

    def hcore(self, include_pin: bool = False) -> np.ndarray:
        if include_pin and self.Vpin is not None:
            return self.T + self.Vpin
        return self.T

    def key(self) -> str:
        return tables_key(self.basis, self.grid, self.screen_tol, self.kernel, self.pin_charge, self.pin_site)


def build_tables(
    basis: BasisSet,
    grid: QuadratureGrid | None = None,
    pin_charge: float = 0.0,
    pin_site=(0.0, 0.0),
    kernel: str = "spectral",
    screen_tol: float = 1e-10,
    store_eri: bool | None = None,
    self_check: bool = False,
    workers: int = 1,
) -> IntegralTables:
    """Compute S, T, the pinning matrix and the repulsion operator.

    ``store_eri`` defaults to materializing the screened store only for
    ``P <= 64``; larger bases contract through the operator directly.
    """
    grid = grid or default_grid(basis)
    S, T = overlap_and_kinetic(basis, grid, self_check=self_check)
    vhat = coulomb_kernel_fourier(basis.cell, grid, kernel)
    op = CoulombOperator(basis, grid, vhat, workers=workers)
    Vpin = op.pinning_matrix(pin_charge, pin_site) if pin_charge else None
    if store_eri is None:
        store_eri = basis.size <= 64
    eri = eri_build(basis, grid, screen_tol, kernel, operator=op, self_check=self_check) if store_eri else None
    return IntegralTables(
        basis, grid, S, T, op, Vpin, float(pin_charge), tuple(map(float, pin_site)), eri, kernel, screen_tol
    )


# -- binary cache -------------------------------------------------------------
#
# Layout (all little-endian):
#   8 bytes   magic  b"WGFRGINT"
#   1 byte    format version (1)
#   uint32    length of the UTF-8 JSON header, then the header itself
#   uint32    number of arrays, then for each array:
#               uint8 name length, ASCII name,
#               uint8 dtype code (0 = float64, 1 = int64),
#               uint8 ndim, ndim x uint64 shape, raw data in C order

CACHE_MAGIC = b"WGFRGINT"
CACHE_VERSION = 1
_DTYPES = {0: "<f8", 1: "<i8"}


def tables_key(basis, grid, screen_tol, kernel, pin_charge, pin_site) -> str:
    desc = {
        "cell": basis.cell.to_dict(),
        "basis": basis.descriptor(),
        "grid": grid.to_dict(),
        "screen_tol": screen_tol,
        "kernel": kernel,
        "pin": [pin_charge, list(pin_site)],
    }
    blob = json.dumps(desc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_tables(tables: IntegralTables, path) -> Path:
    path = Path(path)
    header = {
        "cell": tables.basis.cell.to_dict(),
        "basis": tables.basis.descriptor(),
        "grid": tables.grid.to_dict(),
        "kernel": tables.kernel,
        "screen_tol": tables.screen_tol,
        "pin_charge": tables.pin_charge,
        "pin_site": list(tables.pin_site),
        "key": tables.key(),
    }
    arrays = {"S": tables.S, "T": tables.T, "vhat": tables.coulomb.vhat}
    if tables.Vpin is not None:
        arrays["Vpin"] = tables.Vpin
    if tables.eri is not None:
        arrays["eri_pairs"] = tables.eri.pairs.astype(np.int64)
        arrays["eri_values"] = tables.eri.values
        arrays["eri_diagonal"] = tables.eri.diagonal
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<B", CACHE_VERSION))
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            code = 1 if np.issubdtype(arr.dtype, np.integer) else 0
            data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
            fh.write(struct.pack("<B", len(name)))
            fh.write(name.encode("ascii"))
            fh.write(struct.pack("<BB", code, data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())
    return path


def load_tables(path, workers: int = 1) -> IntegralTables:
    with open(path, "rb") as fh:
        if fh.read(8) != CACHE_MAGIC:
            raise ValueError(f"{path} is not an integral cache file")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != CACHE_VERSION:
            raise ValueError(f"unsupported cache version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<B", fh.read(1))
            name = fh.read(nlen).decode("ascii")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            dtype = np.dtype(_DTYPES[code])
            nbytes = int(np.prod(shape)) * dtype.itemsize
            arrays[name] = np.frombuffer(fh.read(nbytes), dtype=dtype).reshape(shape).copy()
    c = header["cell"]
    cell = TorusCell(c["lx"], c["ly"], c["n_electrons"], c["rs"])
    b = header["basis"]
    basis = build_basis(cell, b["nx"], b["ny"], b["xi"])
    grid = QuadratureGrid(cell, header["grid"]["mx"], header["grid"]["my"])
    op = CoulombOperator(basis, grid, arrays["vhat"], workers=workers)
    eri = None
    if "eri_pairs" in arrays:
        eri = EriStore(basis.size, arrays["eri_pairs"], arrays["eri_values"], arrays["eri_diagonal"], header["screen_tol"])
    return IntegralTables(
        basis,
        grid,
        arrays["S"],
        arrays["T"],
        op,
        arrays.get("Vpin"),
        header["pin_charge"],
        tuple(header["pin_site"]),
        eri,
        header["kernel"],
        header["screen_tol"],
    )


def cached_tables(cache_dir, basis, grid=None, **kwargs) -> IntegralTables:
    """``build_tables`` memoized on disk under a content hash of its inputs."""
    grid = grid or default_grid(basis)
    key = tables_key(
        basis,
        grid,
        kwargs.get("screen_tol", 1e-10),
        kwargs.get("kernel", "spectral"),
        float(kwargs.get("pin_charge", 0.0)),
        tuple(map(float, kwargs.get("pin_site", (0.0, 0.0)))),
    )
    path = Path(cache_dir) / f"integrals-{key}.bin"
    if path.exists():
        log.info("loading integrals from %s", path)
        return load_tables(path, workers=kwargs.get("workers", 1))
    tables = build_tables(basis, grid, **kwargs)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_tables(tables, path)
    return tables
