"""Von Neumann amplification sweeps and norm histories of the streaming update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .angular import build_pn_basis
from .dlra import LinearFlow, LowRankFactors, bug_step, orthonormalize
from .grid import BoundaryMode, build_fourier, build_grid, build_stencils, half_step_symbol

STENCILS = ("T1x", "T1y", "T2x", "T2y")
_SYMBOLS = {"T1x": "d1x", "T1y": "d1y", "T2x": "d2x", "T2y": "d2y"}


def amplification_modulus(nu: float, n_theta: int = 4096, extra_theta=None) -> float:
    """``2 max |s(theta)|`` of the half-step symbol; at most 1 exactly when ``nu <= 1/2``."""
    theta = np.linspace(0.0, 2.0 * np.pi, n_theta + 1)
    if extra_theta is not None:
        theta = np.concatenate([theta, np.ravel(extra_theta)])
    return float(2.0 * np.abs(half_step_symbol(nu, theta)).max())


def periodic_grid(n: int, length: float = 1.0):
    h = length / n
    return build_grid(n, n, h, h, boundary_mode=BoundaryMode.PERIODIC)


def fourier_residuals(grid) -> dict[str, float]:
    """``||T E - E D||_F / ||T||_F`` for each first-order stencil."""
    st = build_stencils(grid)
    fd = build_fourier(grid)
    out = {}
    for name in STENCILS:
        T = getattr(st, name).toarray()
        d = getattr(fd, _SYMBOLS[name])
        out[name] = float(np.linalg.norm(T @ fd.E - fd.E * d[None, :])
                          / np.linalg.norm(T))
    return out


def streaming_flow(grid, basis) -> LinearFlow:
    st = build_stencils(grid)
    return LinearFlow([(st.L2x, basis.A_x), (st.L2y, basis.A_y),
                       (st.L1x, basis.absA_x), (st.L1y, basis.absA_y)])


def random_factors(n_x: int, m: int, r: int, rng) -> LowRankFactors:
    X, _ = orthonormalize(rng.standard_normal((n_x, r)))
    W, _ = orthonormalize(rng.standard_normal((m, r)))
    return LowRankFactors(X, rng.standard_normal((r, r)), W)


@dataclass
class NormHistory:
    nu: float
    seed: int
    dt: float
    norms: np.ndarray

    @property
    def max_ratio(self) -> float:
        """Largest ``||S_{n+1}|| / ||S_n||`` over the history."""
        n = self.norms
        return float(np.max(n[1:] / np.maximum(n[:-1], 1e-300)))

    def monotone(self, rtol: float = 1e-12) -> bool:
        return bool(np.all(self.norms[1:] <= self.norms[:-1] * (1.0 + rtol)))


def streaming_norm_history(nu: float, n: int = 32, N: int = 3, rank: int = 4,
                           steps: int = 100, seed: int = 0, grid=None, flow=None) -> NormHistory:
    """Fixed-rank streaming steps from random factors at CFL number ``nu``.

    ``nu = lambda_max dt / (rho_min h)`` with the P_N eigenvalue bound.
    """
    basis = build_pn_basis(N)
    grid = grid or periodic_grid(n)
    flow = flow or streaming_flow(grid, basis)
    dt = nu * grid.rho_min * min(grid.dx, grid.dy) / basis.lambda_max
    rng = np.random.default_rng(seed)
    f = random_factors(grid.n_cells, basis.m, min(rank, basis.m), rng)
    norms = [np.linalg.norm(f.S)]
    for _ in range(steps):
        f = bug_step(f, flow, dt)
        norms.append(np.linalg.norm(f.S))
    return NormHistory(nu, seed, dt, np.array(norms))
