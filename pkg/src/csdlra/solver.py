"""Multilevel collision-source time march with low-rank moment components."""

from __future__ import annotations

import logging
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from .angular import FOUR_PI, PnBasis, Quadrature, ScatterDiagonal
from .dlra import (
    LinearFlow,
    LowRankFactors,
    TruncationPolicy,
    adaptive_bug_step,
    augment,
    bug_step,
    orthonormalize,
    pad,
    psi_l_step_scatter,
    truncate,
)
from .errors import NumericalError, RunAborted
from .grid import Grid2D, StencilSet, build_stencils
from .physics import CrossSectionModel, accumulate_dose

logger = logging.getLogger(__name__)

SQRT_4PI = np.sqrt(FOUR_PI)


class IntegratorMode(str, Enum):
    FIXED_RANK = "fixed_rank"
    ADAPTIVE = "adaptive"


@dataclass
class SolverConfig:
    levels: int = 1
    mode: IntegratorMode = IntegratorMode.ADAPTIVE
    policy: TruncationPolicy = field(default_factory=lambda: TruncationPolicy(
        0.3, "relative", r_min=2, r_max=100))
    r_init: int = 2
    cfl_safety: float = 1.0
    t_end: float | None = None
    record_every: int = 1
    strict_norm_check: bool = False
    max_steps: int | None = None
    snapshot_dir: str | None = None
    stale_level_sources: bool = False  # diagnostic only: feed levels their t0 source

    def __post_init__(self):
        self.mode = IntegratorMode(self.mode)
        if self.levels < 0:
            raise ValueError(f"level count must be nonnegative, got {self.levels}")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ValueError(f"CFL safety factor must lie in (0, 1], got {self.cfl_safety}")
        if self.r_init < 1:
            raise ValueError(f"initial rank must be positive, got {self.r_init}")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")

    @property
    def r_max(self) -> int:
        return self.policy.r_max


InflowFn = Callable[[float], list]


@dataclass
class Problem:
    """Everything a march needs besides the solver settings.

    ``inflow(t)`` returns ``[(face, g), ...]`` with ``g`` of shape
    ``(len(face.cells), n_q)``: ghost values already divided by the ghost
    density.
    """

    grid: Grid2D
    basis: PnBasis
    quadrature: Quadrature
    scatter: ScatterDiagonal
    xs: CrossSectionModel | None = None
    inflow: InflowFn | None = None
    t_end: float = 1.0
    name: str = "problem"
    stencils: StencilSet | None = None

    def __post_init__(self):
        if self.stencils is None:
            self.stencils = build_stencils(self.grid)
        if self.quadrature.T_M is None or self.quadrature.T_M.shape[1] != self.basis.m:
            raise ValueError("quadrature moment map does not match the P_N basis size")

    @cached_property
    def streaming_flow(self) -> LinearFlow:
        st, b = self.stencils, self.basis
        return LinearFlow([(st.L2x, b.A_x), (st.L2y, b.A_y),
                           (st.L1x, b.absA_x), (st.L1y, b.absA_y)])

    def stopping_power(self, t: float) -> float:
        if self.xs is None:
            return 1.0
        return float(self.xs.S(self.xs.energy_of(min(t, self.xs.t_end))))


@dataclass
class MultilevelState:
    psi_u: np.ndarray
    levels: list[LowRankFactors]
    collided: LowRankFactors
    t: float = 0.0
    step_index: int = 0

    def components(self) -> list[tuple[str, LowRankFactors]]:
        named = [(f"level{i + 1}", f) for i, f in enumerate(self.levels)]
        return named + [("collided", self.collided)]

    def component_norms(self) -> dict[str, float]:
        out = {"uncollided": float(np.linalg.norm(self.psi_u))}
        out.update({name: f.norm() for name, f in self.components()})
        return out

    def total_norm(self) -> float:
        return float(sum(self.component_norms().values()))

    def ranks(self) -> dict[str, int]:
        return {name: f.rank for name, f in self.components()}

    def moment_scalar_flux(self) -> np.ndarray:
        """Scalar flux carried by the moment components."""
        phi = np.zeros(self.psi_u.shape[0])
        for _, f in self.components():
            phi += SQRT_4PI * (f.X @ (f.S @ f.W[0]))
        return phi

    def scalar_flux(self, weights) -> np.ndarray:
        return self.psi_u @ weights + self.moment_scalar_flux()

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.psi_u).all()
                    and all(f.is_finite() for _, f in self.components()))

    def copy(self) -> "MultilevelState":
        return MultilevelState(self.psi_u.copy(), [f.copy() for f in self.levels],
                               self.collided.copy(), self.t, self.step_index)

    def save(self, path) -> Path:
        arrays = {"psi_u": self.psi_u, "t": self.t, "step": self.step_index}
        for name, f in self.components():
            arrays.update({f"{name}_X": f.X, f"{name}_S": f.S, f"{name}_W": f.W})
        path = Path(path)
        np.savez(path, **arrays)
        return path


def initial_state(problem: Problem, config: SolverConfig, psi0=None) -> MultilevelState:
    """Nodal ``psi0`` (default zero) and zero low-rank components of rank ``r_init``."""
    n_x, m = problem.grid.n_cells, problem.basis.m
    psi = np.zeros((n_x, problem.quadrature.n_q)) if psi0 is None else np.array(psi0, dtype=float)
    r = min(config.r_init, n_x, m)
    levels = [LowRankFactors.zeros(n_x, m, r) for _ in range(config.levels)]
    return MultilevelState(psi, levels, LowRankFactors.zeros(n_x, m, r), 0.0, 0)


def cfl_dt(grid: Grid2D, basis: PnBasis, scatter: ScatterDiagonal | None = None,
           t: float = 0.0, safety: float = 1.0, quadrature: Quadrature | None = None) -> float:
    """Largest step with ``lambda dt / (rho_min h) <= safety / 2``.

    ``lambda`` covers the P_N eigenvalues and, if given, the S_N directions.
    When the scattering diagonal exceeds the total cross section the step is
    further limited so that every implicit denominator stays at least 1/2.
    """
    lam = basis.lambda_max
    if quadrature is not None:
        lam = max(lam, float(np.abs(quadrature.points[:, :2]).max()))
    dt = safety * 0.5 * grid.rho_min * min(grid.dx, grid.dy) / lam
    if scatter is not None:
        excess = float(np.max(scatter.sigma_kk(t)) - scatter.sigma_t(t))
        if excess > 0:
            warnings.warn(f"scattering moment exceeds the total cross section by {excess:.3g} "
                          f"at t={t:.4g}; norm stability is not guaranteed", RuntimeWarning)
            dt = min(dt, 0.5 / excess)
    if not np.isfinite(dt) or dt <= 1e-14 * max(1.0, abs(t)):
        raise NumericalError(f"time step underflow (dt={dt})")
    return dt


def nodal_streaming(psi, problem: Problem, t: float):
    """Upwind finite-volume streaming of every ordinate, inflow included."""
    st, q = problem.stencils, problem.quadrature
    ox, oy = q.omega_x, q.omega_y
    out = st.L2x @ psi
    out *= ox
    for op, w in ((st.L1x, np.abs(ox)), (st.L2y, oy), (st.L1y, np.abs(oy))):
        tmp = op @ psi
        tmp *= w
        out += tmp
    if problem.inflow is not None:
        for face, g in problem.inflow(t):
            om = ox if face.axis == "x" else oy
            out[face.cells] += (face.t2 * om + face.t1 * np.abs(om)) * g
    return out


def uncollided_step(psi, problem: Problem, t0: float, dt: float, sigma_t1: float):
    """Explicit streaming followed by implicit out-scattering."""
    psi1 = nodal_streaming(psi, problem, t0)
    psi1 *= dt
    psi1 += psi
    psi1 /= 1.0 + dt * sigma_t1
    if not np.all(np.isfinite(psi1)):
        raise NumericalError("non-finite values in the uncollided sweep")
    return psi1


class NodalSource:
    """In-scattering source ``psi T_M Sigma`` from the nodal component."""

    def __init__(self, psi, T_M, sigma_kk):
        self.psi = psi
        self.T_M = T_M
        self.sigma = np.asarray(sigma_kk, dtype=float)

    def dense(self):
        return (self.psi @ self.T_M) * self.sigma

    def right(self, W):
        return self.psi @ (self.T_M @ (self.sigma[:, None] * W))

    def left(self, X):
        return ((X.T @ self.psi) @ self.T_M) * self.sigma

    def both(self, X, W):
        return (X.T @ self.psi) @ (self.T_M @ (self.sigma[:, None] * W))


class FactoredSource:
    """In-scattering source ``Xs Ss Ws^T Sigma`` from a low-rank component."""

    def __init__(self, factors: LowRankFactors, sigma_kk):
        self.f = factors
        self.sigma = np.asarray(sigma_kk, dtype=float)

    def dense(self):
        return self.f.full() * self.sigma

    def right(self, W):
        return self.f.X @ (self.f.S @ (self.f.W.T @ (self.sigma[:, None] * W)))

    def left(self, X):
        return ((X.T @ self.f.X) @ self.f.S) @ (self.f.W.T * self.sigma)

    def both(self, X, W):
        return (X.T @ self.f.X) @ self.f.S @ (self.f.W.T @ (self.sigma[:, None] * W))


def scatter_update(f: LowRankFactors, source, dt: float, damping: float,
                   policy: TruncationPolicy | None = None) -> LowRankFactors:
    """Implicit-Euler scattering K/L/S substeps around ``source``.

    ``damping`` is ``1 / (1 + dt sigma_t)`` for level components and 1 for the
    collided in-scatter. With a ``policy`` the bases are augmented and the
    coefficients truncated afterwards.
    """
    a = damping
    K = a * (f.X @ f.S + dt * source.right(f.W))
    L = a * (f.S @ f.W.T + dt * source.left(f.X))
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(L))):
        raise NumericalError("non-finite values in the scattering update")
    if policy is None:
        X1, _ = orthonormalize(K)
        W1, _ = orthonormalize(L.T)
        S_tilde = (X1.T @ f.X) @ f.S @ (f.W.T @ W1)
        S1 = a * (S_tilde + dt * source.both(X1, W1))
        return LowRankFactors(X1, S1, W1)
    X_hat = augment(f.X, K)
    W_hat = augment(f.W, L.T)
    S_hat = a * (pad(f.S, X_hat.shape[1], W_hat.shape[1]) + dt * source.both(X_hat, W_hat))
    if not np.all(np.isfinite(S_hat)):
        raise NumericalError("non-finite values in the scattering update")
    return truncate(S_hat, X_hat, W_hat, policy)


@dataclass
class StepRecord:
    step: int
    t: float
    dt: float
    wall: float
    ranks: dict
    norms: dict
    total_norm: float
    norm_increase: float


@dataclass
class RunReport:
    tag: str
    grid: Grid2D
    dose: np.ndarray
    scalar_flux: np.ndarray
    records: list[StepRecord]
    final_state: MultilevelState
    wall_time: float
    config: SolverConfig | None = None
    problem_name: str = ""

    def rank_rows(self):
        """``(step, t, component, stage, rank)`` rows."""
        rows = []
        for rec in self.records:
            for key, r in rec.ranks.items():
                comp, _, stage = key.partition(":")
                rows.append((rec.step, rec.t, comp, stage or "final", r))
        return rows

    def norm_rows(self):
        rows = []
        for rec in self.records:
            for comp, val in rec.norms.items():
                rows.append((rec.step, rec.t, comp, val))
            rows.append((rec.step, rec.t, "total", rec.total_norm))
        return rows

    def max_rank(self, component: str | None = None) -> int:
        vals = [r for (_, _, comp, _, r) in self.rank_rows()
                if component is None or comp == component]
        return max(vals) if vals else 0

    def max_norm_increase(self) -> float:
        return max((rec.norm_increase for rec in self.records), default=0.0)


class Solver:
    """Low-rank multilevel collision-source solver."""

    tag = "dlra"

    def __init__(self, problem: Problem, config: SolverConfig):
        self.problem = problem
        self.config = config

    def streaming(self, f: LowRankFactors, dt: float) -> LowRankFactors:
        flow = self.problem.streaming_flow
        if self.config.mode is IntegratorMode.ADAPTIVE:
            return adaptive_bug_step(f, flow, dt, self.config.policy)
        return bug_step(f, flow, dt)

    def _policy(self):
        return self.config.policy if self.config.mode is IntegratorMode.ADAPTIVE else None

    def step(self, state: MultilevelState, dt: float, stage_ranks: dict | None = None):
        """Advance every component by one pseudo-time step."""
        p, cfg = self.problem, self.config
        t0, t1 = state.t, state.t + dt
        sig_t = p.scatter.sigma_t(t1)
        sig = p.scatter.sigma_kk(t1)
        a = 1.0 / (1.0 + dt * sig_t)
        ranks = stage_ranks if stage_ranks is not None else {}

        psi1 = uncollided_step(state.psi_u, p, t0, dt, sig_t)
        source = NodalSource(psi1, p.quadrature.T_M, sig)
        new_levels = []
        for i, f in enumerate(state.levels):
            name = f"level{i + 1}"
            f_star = self.streaming(f, dt)
            ranks[f"{name}:streaming"] = f_star.rank
            f1 = scatter_update(f_star, source, dt, a, self._policy())
            ranks[f"{name}:scatter"] = f1.rank
            new_levels.append(f1)
            source = FactoredSource(f if cfg.stale_level_sources else f1, sig)

        c_star = self.streaming(state.collided, dt)
        ranks["collided:streaming"] = c_star.rank
        c_bar = scatter_update(c_star, source, dt, 1.0, self._policy())
        c1 = psi_l_step_scatter(c_bar, sig_t, sig, dt)
        ranks["collided:scatter"] = c1.rank
        return MultilevelState(psi1, new_levels, c1, t1, state.step_index + 1)

    def time_step(self, state: MultilevelState) -> float:
        p = self.problem
        return cfl_dt(p.grid, p.basis, p.scatter, state.t, self.config.cfl_safety, p.quadrature)

    def run(self, state: MultilevelState | None = None, dt: float | None = None) -> RunReport:
        """March to the end time, accumulating dose and recording diagnostics."""
        p, cfg = self.problem, self.config
        state = initial_state(p, cfg) if state is None else state
        t_end = cfg.t_end if cfg.t_end is not None else p.t_end
        dose = np.zeros(p.grid.n_cells)
        records: list[StepRecord] = []
        start = time.perf_counter()
        norm_check = p.inflow is None
        n = 0
        while state.t < t_end * (1 - 1e-13) and (cfg.max_steps is None or n < cfg.max_steps):
            h = dt if dt is not None else self.time_step(state)
            h = min(h, t_end - state.t)
            accumulate_dose(dose, state, p.grid.rho, h, p.quadrature.weights,
                            p.stopping_power(state.t))
            before = state.total_norm()
            tic = time.perf_counter()
            ranks: dict = {}
            try:
                new = self.step(state, h, ranks)
            except NumericalError as exc:
                raise RunAborted(f"step {state.step_index + 1} failed: {exc}",
                                 self._snapshot(state)) from exc
            if not new.is_finite():
                raise RunAborted(f"non-finite state after step {new.step_index}",
                                 self._snapshot(state))
            wall = time.perf_counter() - tic
            after = new.total_norm()
            increase = (after - before) / max(before, 1e-300)
            if norm_check and increase > 1e-10:
                msg = (f"total norm grew by a relative {increase:.3e} at step "
                       f"{new.step_index} (t={new.t:.5g})")
                if cfg.strict_norm_check:
                    raise RunAborted(msg, self._snapshot(state))
                logger.warning(msg)
            state = new
            n += 1
            if n % cfg.record_every == 0 or state.t >= t_end * (1 - 1e-13):
                ranks.update(state.ranks())
                records.append(StepRecord(state.step_index, state.t, h, wall, ranks,
                                          state.component_norms(), after,
                                          increase if norm_check else 0.0))
        flux = state.scalar_flux(p.quadrature.weights)
        return RunReport(self.tag, p.grid, dose, flux, records, state,
                         time.perf_counter() - start, cfg, p.name)

    def _snapshot(self, state: MultilevelState) -> str:
        folder = Path(self.config.snapshot_dir or tempfile.gettempdir())
        folder.mkdir(parents=True, exist_ok=True)
        path = folder / f"{self.tag}_snapshot_step{state.step_index}.npz"
        return str(state.save(path))
