"""Dense reference solver for the same split scheme, and canned benchmark setups."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .angular import (
    build_directed_quadrature,
    build_pn_basis,
    build_quadrature,
    build_scatter_diagonal,
    isotropic_kernel,
)
from .errors import NumericalError, RunAborted
from .grid import BoundaryMode, build_grid
from .physics import BeamModel, CrossSectionModel, accumulate_dose, ct_to_density, read_image
from .solver import (
    SQRT_4PI,
    NodalSource,
    Problem,
    RunReport,
    SolverConfig,
    StepRecord,
    cfl_dt,
    uncollided_step,
)

logger = logging.getLogger(__name__)


@dataclass
class FullState:
    """Uncollided nodal matrix and dense ``n_x x m`` moment matrices."""

    psi_u: np.ndarray
    u_levels: list[np.ndarray]
    u_c: np.ndarray
    t: float = 0.0
    step_index: int = 0

    def components(self):
        named = [(f"level{i + 1}", u) for i, u in enumerate(self.u_levels)]
        return named + [("collided", self.u_c)]

    def component_norms(self) -> dict[str, float]:
        out = {"uncollided": float(np.linalg.norm(self.psi_u))}
        out.update({name: float(np.linalg.norm(u)) for name, u in self.components()})
        return out

    def total_norm(self) -> float:
        return float(sum(self.component_norms().values()))

    def ranks(self):
        return {}

    def moment_scalar_flux(self):
        return SQRT_4PI * sum(u[:, 0] for _, u in self.components())

    def scalar_flux(self, weights):
        return self.psi_u @ weights + self.moment_scalar_flux()

    def is_finite(self):
        return bool(np.isfinite(self.psi_u).all()
                    and all(np.isfinite(u).all() for _, u in self.components()))

    @classmethod
    def from_multilevel(cls, state) -> "FullState":
        return cls(state.psi_u.copy(), [f.full() for f in state.levels],
                   state.collided.full(), state.t, state.step_index)

    def save(self, path):
        arrays = {"psi_u": self.psi_u, "t": self.t, "step": self.step_index}
        arrays.update({name: u for name, u in self.components()})
        np.savez(path, **arrays)
        return Path(path)


def full_step(state: FullState, problem: Problem, dt: float) -> FullState:
    """Same operator splitting and ordering as the low-rank solver, dense."""
    p = problem
    t0, t1 = state.t, state.t + dt
    sig_t = p.scatter.sigma_t(t1)
    sig = p.scatter.sigma_kk(t1)
    flow = p.streaming_flow

    psi1 = uncollided_step(state.psi_u, p, t0, dt, sig_t)
    source = NodalSource(psi1, p.quadrature.T_M, sig).dense()
    levels = []
    for u in state.u_levels:
        u_star = u + dt * flow.apply(u)
        u1 = (u_star + dt * source) / (1.0 + dt * sig_t)
        levels.append(u1)
        source = u1 * sig
    denom = 1.0 + dt * sig_t - dt * sig
    if np.any(denom <= 0):
        raise NumericalError("implicit scattering denominator is not positive")
    u_c = (state.u_c + dt * flow.apply(state.u_c) + dt * source) / denom
    return FullState(psi1, levels, u_c, t1, state.step_index + 1)


class OracleSolver:
    """Dense counterpart of :class:`csdlra.solver.Solver`.

    ``variant="split"`` keeps the configured number of levels, ``"collided"``
    drops them (plain collided/uncollided split).
    """

    tag = "oracle"

    def __init__(self, problem: Problem, config: SolverConfig, variant: str = "split"):
        if variant not in ("split", "collided"):
            raise ValueError(f"unknown oracle variant {variant!r}")
        self.problem = problem
        self.config = config
        self.variant = variant

    @property
    def n_levels(self) -> int:
        return self.config.levels if self.variant == "split" else 0

    def initial_state(self, psi0=None) -> FullState:
        p = self.problem
        n_x, m = p.grid.n_cells, p.basis.m
        psi = np.zeros((n_x, p.quadrature.n_q)) if psi0 is None else np.array(psi0, dtype=float)
        return FullState(psi, [np.zeros((n_x, m)) for _ in range(self.n_levels)],
                         np.zeros((n_x, m)))

    def step(self, state: FullState, dt: float) -> FullState:
        return full_step(state, self.problem, dt)

    def time_step(self, state) -> float:
        p = self.problem
        return cfl_dt(p.grid, p.basis, p.scatter, state.t, self.config.cfl_safety, p.quadrature)

    def run(self, state: FullState | None = None, dt: float | None = None) -> RunReport:
        p, cfg = self.problem, self.config
        state = self.initial_state() if state is None else state
        t_end = cfg.t_end if cfg.t_end is not None else p.t_end
        dose = np.zeros(p.grid.n_cells)
        records = []
        start = time.perf_counter()
        n = 0
        while state.t < t_end * (1 - 1e-13) and (cfg.max_steps is None or n < cfg.max_steps):
            h = dt if dt is not None else self.time_step(state)
            h = min(h, t_end - state.t)
            accumulate_dose(dose, state, p.grid.rho, h, p.quadrature.weights,
                            p.stopping_power(state.t))
            before = state.total_norm()
            tic = time.perf_counter()
            try:
                new = self.step(state, h)
            except NumericalError as exc:
                raise RunAborted(f"oracle step failed: {exc}") from exc
            if not new.is_finite():
                raise RunAborted(f"non-finite oracle state after step {new.step_index}")
            after = new.total_norm()
            state = new
            n += 1
            if n % cfg.record_every == 0 or state.t >= t_end * (1 - 1e-13):
                records.append(StepRecord(state.step_index, state.t, h,
                                          time.perf_counter() - tic, {},
                                          state.component_norms(), after,
                                          (after - before) / max(before, 1e-300)))
        flux = state.scalar_flux(p.quadrature.weights)
        return RunReport(self.tag, p.grid, dose, flux, records, state,
                         time.perf_counter() - start, cfg, p.name)


@dataclass
class Setup:
    problem: Problem
    psi0: np.ndarray | None = None
    beam: BeamModel | None = None
    info: dict = field(default_factory=dict)


def linesource_scale(grid_n=100, N=7, quad_order=None, full_scale=False):
    """``(grid_n, N, quad_order, slow)`` after applying the full-scale switch."""
    if full_scale:
        grid_n, N, quad_order = 200, 21, 22
    quad_order = quad_order or N + 1
    slow = grid_n * grid_n * (N + 1) ** 2 > 4_000_000
    if slow:
        logger.warning("line source with %d cells and P_%d will take hours", grid_n ** 2, N)
    return grid_n, N, quad_order, slow


def linesource_setup(grid_n: int = 100, N: int = 7, quad_order: int | None = None,
                     sigma: float = 0.03, sigma_s: float = 1.0, t_end: float = 1.0,
                     full_scale: bool = False) -> Setup:
    """Gaussian pulse in an isotropically scattering unit-density medium on [-1.5, 1.5]^2.

    ``full_scale`` switches to the 200x200, P_21, 968-ordinate configuration,
    which takes hours.
    """
    grid_n, N, quad_order, slow = linesource_scale(grid_n, N, quad_order, full_scale)
    h = 3.0 / grid_n
    grid = build_grid(grid_n, grid_n, h, h, origin=(-1.5, -1.5), density=1.0,
                      boundary_mode=BoundaryMode.DIRICHLET_GHOST)
    basis = build_pn_basis(N)
    quad = build_quadrature(quad_order, n_degree=N)
    scatter = build_scatter_diagonal(isotropic_kernel(sigma_s), N)
    x, y = grid.cell_centers()
    pulse = np.exp(-(x * x + y * y) / (4.0 * sigma * sigma)) / (4.0 * np.pi * sigma * sigma)
    psi0 = np.repeat(pulse[:, None], quad.n_q, axis=1)
    problem = Problem(grid, basis, quad, scatter, None, None, t_end, "linesource")
    return Setup(problem, psi0, None, {"sigma": sigma, "slow": slow})


def beam_inflow(beam: BeamModel, xs: CrossSectionModel, faces, quadrature):
    """Ghost values ``S(E(t)) psi_in`` on every boundary face, skipping negligible ones."""
    omega1 = quadrature.omega_x

    def inflow(t):
        E = xs.energy_of(min(t, xs.t_end))
        if beam.energy_factor(E) < 1e-300:
            return []
        S = float(xs.S(E))
        out = []
        for face in faces:
            g = S * beam(E, face.x[:, None], face.y[:, None], omega1[None, :])
            if g.max() > 0:
                out.append((face, g))
        return out

    return inflow


def layered_phantom(nx: int, ny: int, interface_row: int | None = None,
                    low_on_top: bool = True) -> np.ndarray:
    """Gray field ``[i_x, j_y]``: a dark (0) band and a white (1) band split along y."""
    interface_row = ny // 2 if interface_row is None else interface_row
    gray = np.zeros((nx, ny))
    if low_on_top:
        gray[:, :interface_row] = 1.0
    else:
        gray[:, interface_row:] = 1.0
    return gray


@dataclass
class LungOptions:
    nx: int = 64
    ny: int = 32
    width: float = 8.0
    height: float = 4.0
    origin: tuple | None = None
    N: int = 5
    quad_order: int = 16
    cone_cos: float = 0.102
    fill_air: bool = True
    e_max: float = 21.0


def lung_setup(image=None, options: LungOptions | None = None, beam: BeamModel | None = None,
               xs: CrossSectionModel | None = None) -> Setup:
    """Beam-driven dose problem on a density map derived from a gray image.

    ``image`` is a path (PGM or CSV) or a gray field ``[i_x, j_y]``; ``None``
    gives the layered phantom. The image is resampled to the grid. By default
    the left boundary sits at the beam's x mean and the domain is centred on
    its y mean, so the beam enters through the left face.
    """
    opt = options or LungOptions()
    beam = beam or BeamModel(e_max=opt.e_max)
    xs = xs or CrossSectionModel.lung_default(opt.e_max)
    if image is None:
        gray = layered_phantom(opt.nx, opt.ny)
        fill_air = False
    else:
        gray = read_image(image) if isinstance(image, (str, Path)) else np.asarray(image, float)
        fill_air = opt.fill_air
    if gray.shape != (opt.nx, opt.ny):
        zoom = (opt.nx / gray.shape[0], opt.ny / gray.shape[1])
        gray = np.clip(ndimage.zoom(gray, zoom, order=1, grid_mode=True, mode="nearest"), 0, 1)
    rho = ct_to_density(gray, fill_air=fill_air)
    origin = opt.origin or (beam.x_mean, beam.y_mean - 0.5 * opt.height)
    grid = build_grid(opt.nx, opt.ny, opt.width / opt.nx, opt.height / opt.ny, origin=origin,
                      density=rho, boundary_mode=BoundaryMode.DIRICHLET_GHOST)
    basis = build_pn_basis(opt.N)
    quad = build_directed_quadrature(opt.quad_order, (beam.omega1_mean, 0.0, 0.0),
                                     np.arccos(opt.cone_cos), n_degree=opt.N)
    scatter = xs.scatter_diagonal(opt.N)
    problem = Problem(grid, basis, quad, scatter, xs, None, xs.t_end, "ct-plan")
    problem.inflow = beam_inflow(beam, xs, problem.stencils.ghost_faces, quad)
    return Setup(problem, None, beam, {"gray": gray, "n_q": quad.n_q,
                                       "full_n_q": 2 * opt.quad_order ** 2})


def scalar_flux_initial(setup: Setup) -> np.ndarray:
    """Scalar flux of the initial nodal field under the setup's quadrature."""
    if setup.psi0 is None:
        return np.zeros(setup.problem.grid.n_cells)
    return setup.psi0 @ setup.problem.quadrature.weights

