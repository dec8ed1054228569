"""Structured 2D finite-volume mesh, stencil matrices and Fourier machinery.

Cells are flattened as ``k = i * N_y + j`` (0-based) where ``i`` runs over x
and ``j`` over y. In 1-based form this is ``idx(i, j) = (i - 1) * N_y + j``,
which coincides with the usual ``(i - 1) * N_x + j`` on square grids.

Sign convention of the stencils: ``T2`` approximates ``-d/dx`` (central
difference) and ``T1`` approximates ``(dx / 2) d^2/dx^2``, so that the
semi-discrete streaming operator

    F(u) = L2x u Ax^T + L2y u Ay^T + L1x u |Ax|^T + L1y u |Ay|^T

is the first-order Roe upwind scheme for ``du/dt = -A . grad(u / rho)``.
With this choice ``T E = E D`` holds with ``D1 = (cos(theta) - 1) / dx`` and
``D2 = -i sin(theta) / dx``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

MAX_FOURIER_CELLS = 4096


class BoundaryMode(str, Enum):
    PERIODIC = "periodic"
    DIRICHLET_GHOST = "dirichlet_ghost"


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell-centred grid on ``[x0, x0 + nx dx] x [y0, y0 + ny dy]``."""

    nx: int
    ny: int
    dx: float
    dy: float
    x0: float
    y0: float
    rho: np.ndarray
    boundary_mode: BoundaryMode = BoundaryMode.DIRICHLET_GHOST
    rho_floor: float = 0.0
    n_floored: int = 0

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def periodic(self) -> bool:
        return self.boundary_mode is BoundaryMode.PERIODIC

    @property
    def rho_min(self) -> float:
        return float(self.rho.min())

    def idx(self, i: int, j: int) -> int:
        """1-based flat index of 1-based cell ``(i, j)``."""
        if not (1 <= i <= self.nx and 1 <= j <= self.ny):
            raise IndexError(f"cell ({i}, {j}) outside {self.nx}x{self.ny} grid")
        return (i - 1) * self.ny + j

    def flat(self, i, j):
        """0-based flat index of 0-based cell ``(i, j)``; works on arrays."""
        return np.asarray(i) * self.ny + np.asarray(j)

    def x_centers(self) -> np.ndarray:
        return self.x0 + (np.arange(self.nx) + 0.5) * self.dx

    def y_centers(self) -> np.ndarray:
        return self.y0 + (np.arange(self.ny) + 0.5) * self.dy

    def cell_centers(self):
        """Flattened ``(x, y)`` coordinates of all cell centres."""
        xc, yc = np.meshgrid(self.x_centers(), self.y_centers(), indexing="ij")
        return xc.ravel(), yc.ravel()

    def as_field(self, values) -> np.ndarray:
        """Reshape a flat cell vector to ``(nx, ny)``."""
        return np.asarray(values).reshape(self.nx, self.ny)


def build_grid(nx, ny, dx, dy, origin=(0.0, 0.0), density=1.0,
               boundary_mode=BoundaryMode.DIRICHLET_GHOST, rho_floor=0.05):
    """Validate inputs and construct a :class:`Grid2D`.

    ``density`` is a scalar, a flat vector of ``nx * ny`` values in flattening
    order, or an ``(nx, ny)`` array. Values below ``rho_floor`` are raised to
    it; the number of floored cells is stored on the grid and logged.
    """
    nx, ny = int(nx), int(ny)
    if nx < 3 or ny < 3:
        raise ValueError(f"grid needs at least 3x3 cells, got {nx}x{ny}")
    if not (dx > 0 and dy > 0):
        raise ValueError(f"cell widths must be positive, got dx={dx}, dy={dy}")
    mode = BoundaryMode(boundary_mode)

    rho = np.asarray(density, dtype=float)
    if rho.ndim == 0:
        rho = np.full(nx * ny, float(rho))
    elif rho.shape == (nx, ny):
        rho = rho.ravel().copy()
    elif rho.shape == (nx * ny,):
        rho = rho.copy()
    else:
        raise ValueError(f"density field of shape {rho.shape} does not match "
                         f"{nx}x{ny} grid")
    if not np.all(np.isfinite(rho)):
        raise ValueError("density field contains non-finite values")
    floored = rho < rho_floor
    n_floored = int(floored.sum())
    if n_floored:
        logger.info("raised %d cell densities to the floor %g", n_floored, rho_floor)
        rho[floored] = rho_floor
    if np.any(rho <= 0):
        raise ValueError("densities must be positive after flooring")
    rho.setflags(write=False)
    return Grid2D(nx, ny, float(dx), float(dy), float(origin[0]), float(origin[1]),
                  rho, mode, float(rho_floor), n_floored)


@dataclass(frozen=True)
class GhostFace:
    """Coupling of boundary cells to their (eliminated) ghost neighbours.

    A ghost value ``g`` (already divided by the ghost density) enters the
    stencil rows ``cells`` as ``t2 * g`` for advection and ``t1 * g`` for
    diffusion. ``x``/``y`` are the coordinates of the boundary face centres.
    """

    axis: str
    side: str
    cells: np.ndarray
    t1: float
    t2: float
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class StencilSet:
    T1x: sp.csr_matrix
    T1y: sp.csr_matrix
    T2x: sp.csr_matrix
    T2y: sp.csr_matrix
    L1x: sp.csr_matrix
    L1y: sp.csr_matrix
    L2x: sp.csr_matrix
    L2y: sp.csr_matrix
    ghost_faces: tuple = field(default_factory=tuple)


def _diff_1d(n, h, periodic):
    """1D diffusion (``T1``) and advection (``T2``) stencils."""
    main = np.full(n, -1.0 / h)
    off = np.full(n - 1, 0.5 / h)
    t1 = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
    # row i: +1/(2h) at i-1, -1/(2h) at i+1
    t2 = sp.diags([off, -off], [-1, 1], shape=(n, n), format="lil")
    if periodic:
        t1[0, n - 1] = 0.5 / h
        t1[n - 1, 0] = 0.5 / h
        t2[0, n - 1] = 0.5 / h
        t2[n - 1, 0] = -0.5 / h
    return t1.tocsr(), t2.tocsr()


def _canonical(m):
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.sort_indices()
    return m


def build_stencils(grid: Grid2D) -> StencilSet:
    """Assemble the density-free ``T`` and density-weighted ``L = T diag(rho)^-1``."""
    periodic = grid.periodic
    t1x_1d, t2x_1d = _diff_1d(grid.nx, grid.dx, periodic)
    t1y_1d, t2y_1d = _diff_1d(grid.ny, grid.dy, periodic)
    ix, iy = sp.identity(grid.nx, format="csr"), sp.identity(grid.ny, format="csr")
    T1x = _canonical(sp.kron(t1x_1d, iy))
    T2x = _canonical(sp.kron(t2x_1d, iy))
    T1y = _canonical(sp.kron(ix, t1y_1d))
    T2y = _canonical(sp.kron(ix, t2y_1d))
    inv_rho = sp.diags(1.0 / grid.rho)
    L = {name: _canonical(m @ inv_rho) for name, m in
         (("L1x", T1x), ("L1y", T1y), ("L2x", T2x), ("L2y", T2y))}

    faces = ()
    if not periodic:
        j = np.arange(grid.ny)
        i = np.arange(grid.nx)
        yc, xc = grid.y_centers(), grid.x_centers()
        x_lo, x_hi = grid.x0, grid.x0 + grid.nx * grid.dx
        y_lo, y_hi = grid.y0, grid.y0 + grid.ny * grid.dy
        hx, hy = 0.5 / grid.dx, 0.5 / grid.dy
        faces = (
            GhostFace("x", "low", grid.flat(0, j), hx, hx, np.full(grid.ny, x_lo), yc),
            GhostFace("x", "high", grid.flat(grid.nx - 1, j), hx, -hx,
                      np.full(grid.ny, x_hi), yc),
            GhostFace("y", "low", grid.flat(i, 0), hy, hy, xc, np.full(grid.nx, y_lo)),
            GhostFace("y", "high", grid.flat(i, grid.ny - 1), hy, -hy,
                      xc, np.full(grid.nx, y_hi)),
        )
    return StencilSet(T1x, T1y, T2x, T2y, ghost_faces=faces, **L)


@dataclass(frozen=True)
class FourierDiag:
    """Orthonormal Fourier modes ``E`` and the stencil symbols (diagonals)."""

    E: np.ndarray
    d1x: np.ndarray
    d1y: np.ndarray
    d2x: np.ndarray
    d2y: np.ndarray
    theta_x: np.ndarray
    theta_y: np.ndarray

    def symbol(self, name):
        return getattr(self, name.lower().replace("_", ""))


def build_fourier(grid: Grid2D) -> FourierDiag:
    """Discrete Fourier modes of a periodic grid.

    Column ``a * N_y + b`` of ``E`` is the mode with phase increments
    ``theta_x = 2 pi a / N_x`` per cell in x and ``theta_y = 2 pi b / N_y`` in y,
    normalised so that ``E E^H = I``.
    """
    if not grid.periodic:
        raise ValueError("Fourier symbols are only defined on periodic grids")
    if grid.n_cells > MAX_FOURIER_CELLS:
        raise ValueError(f"dense Fourier matrix refused for {grid.n_cells} cells "
                         f"(limit {MAX_FOURIER_CELLS})")
    tx = 2.0 * np.pi * np.arange(grid.nx) / grid.nx
    ty = 2.0 * np.pi * np.arange(grid.ny) / grid.ny
    fx = np.exp(1j * np.outer(np.arange(grid.nx), tx)) / np.sqrt(grid.nx)
    fy = np.exp(1j * np.outer(np.arange(grid.ny), ty)) / np.sqrt(grid.ny)
    E = np.kron(fx, fy)
    theta_x = np.repeat(tx, grid.ny)
    theta_y = np.tile(ty, grid.nx)
    return FourierDiag(
        E=E,
        d1x=(np.cos(theta_x) - 1.0) / grid.dx + 0j,
        d1y=(np.cos(theta_y) - 1.0) / grid.dy + 0j,
        d2x=-1j * np.sin(theta_x) / grid.dx,
        d2y=-1j * np.sin(theta_y) / grid.dy,
        theta_x=theta_x,
        theta_y=theta_y,
    )


def half_step_symbol(nu, theta):
    """Per-direction amplification symbol ``1/2 + nu (cos t - 1) - i nu sin t``.

    Its modulus is at most 1/2 for all ``theta`` exactly when ``nu <= 1/2``.
    """
    theta = np.asarray(theta, dtype=float)
    return 0.5 + nu * (np.cos(theta) - 1.0) - 1j * nu * np.sin(theta)
