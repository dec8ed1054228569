"""Stopping power and cross-section models, the energy/pseudo-time map, beams and dose."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, ndimage, optimize

from .angular import ScatterDiagonal, build_scatter_diagonal, henyey_greenstein

logger = logging.getLogger(__name__)

RHO_BONE = 1.85
RHO_MIN = 0.05


def _as_function(value) -> Callable[[float], float]:
    if callable(value):
        return value
    const = float(value)
    return lambda E: const + 0.0 * np.asarray(E, dtype=float)


def linear_stopping_power(s0: float, s1: float = 0.0) -> Callable:
    """``S(E) = s0 + s1 * E``."""
    def S(E):
        return s0 + s1 * np.asarray(E, dtype=float)
    return S


def read_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column CSV ``(E, value)``; lines starting with ``#`` and a text header are skipped."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if rows:
                    raise ValueError(f"{path}:{lineno}: expected two numeric columns")
    if len(rows) < 2:
        raise ValueError(f"{path}: a table needs at least two rows")
    data = np.array(sorted(rows))
    if np.any(np.diff(data[:, 0]) <= 0):
        raise ValueError(f"{path}: energies must be strictly increasing")
    return data[:, 0], data[:, 1]


def tabulated(energies, values) -> Callable:
    """Piecewise-linear interpolant, constant beyond the table ends."""
    e = np.asarray(energies, dtype=float)
    v = np.asarray(values, dtype=float)
    return lambda E: np.interp(E, e, v)


@dataclass
class CrossSectionModel:
    """Energy-dependent material data.

    ``stopping_power`` is ``S(E)`` in MeV cm^2/g; the scattering kernel is
    ``c(E) * HG(mu; g(E))`` so the total cross section equals ``c(E)``.
    """

    e_max: float
    stopping_power: Callable = field(default_factory=lambda: linear_stopping_power(1.0))
    scatter_strength: Callable | float = 1.0
    anisotropy: Callable | float = 0.0
    e_cut: float | None = None

    def __post_init__(self):
        if self.e_max <= 0:
            raise ValueError(f"maximal energy must be positive, got {self.e_max}")
        if self.e_cut is None:
            self.e_cut = 1e-3 * self.e_max
        self._c = _as_function(self.scatter_strength)
        self._g = _as_function(self.anisotropy)
        grid = np.linspace(self.e_cut, self.e_max, 257)
        if np.any(self.S(grid) <= 0):
            raise ValueError("stopping power must be positive on (E_cut, E_max]")
        self._t_cut = None

    def S(self, E):
        return self.stopping_power(E)

    def sigma_t_energy(self, E) -> float:
        return float(self._c(E))

    def kernel_energy(self, E, mu):
        return self._c(E) * henyey_greenstein(mu, float(self._g(E)))

    def pseudo_time(self, E) -> float:
        """``t(E) = int_E^{E_max} dE' / S(E')``; zero at ``E_max``."""
        if not 0.0 <= E <= self.e_max * (1 + 1e-14):
            raise ValueError(f"energy {E} outside [0, {self.e_max}]")
        E = min(float(E), self.e_max)
        if E < self.e_cut:
            raise ValueError(f"energy {E} below the cutoff {self.e_cut}")
        val, _ = integrate.quad(lambda e: 1.0 / float(self.S(e)), E, self.e_max,
                                epsabs=1e-13, epsrel=1e-13, limit=200)
        return val

    @property
    def t_end(self) -> float:
        """Pseudo-time at which the energy reaches the cutoff."""
        if self._t_cut is None:
            self._t_cut = self.pseudo_time(self.e_cut)
        return self._t_cut

    def energy_of(self, t) -> float:
        """Inverse of :meth:`pseudo_time` by bracketed root finding."""
        t = float(t)
        if t <= 0.0:
            if t < -1e-14:
                raise ValueError(f"pseudo-time {t} is negative")
            return self.e_max
        if t > self.t_end * (1 + 1e-12):
            raise ValueError(f"pseudo-time {t} beyond the cutoff time {self.t_end}")
        if t >= self.t_end:
            return self.e_cut
        return optimize.brentq(lambda E: self.pseudo_time(E) - t, self.e_cut, self.e_max,
                               xtol=1e-13, rtol=4 * np.finfo(float).eps)

    def scatter_diagonal(self, N: int) -> ScatterDiagonal:
        """Scattering moments as functions of pseudo-time."""
        def kernel(t, mu):
            return self.kernel_energy(self.energy_of(t), mu)
        return build_scatter_diagonal(kernel, N)

    @classmethod
    def unit(cls, e_max=1.0, sigma_s=1.0, anisotropy=0.0):
        """``S = 1``: pseudo-time equals ``E_max - E``."""
        return cls(e_max, linear_stopping_power(1.0), sigma_s, anisotropy, e_cut=0.0)

    @classmethod
    def lung_default(cls, e_max=21.0, stopping_power=None):
        """Stand-in electron data: slowly rising stopping power, forward-peaked scattering."""
        return cls(
            e_max,
            stopping_power or linear_stopping_power(1.8, 0.01),
            lambda E: 20.0 / (np.asarray(E, dtype=float) + 1.0),
            lambda E: 0.8 + 0.15 * np.asarray(E, dtype=float) / e_max,
        )


def transform_density(psi, S, rho):
    """``S * rho * psi``."""
    S = np.asarray(S, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(S <= 0) or np.any(rho <= 0):
        raise ValueError("stopping power and density must be positive")
    return S * rho * psi


def inverse_transform_density(psi_t, S, rho):
    S = np.asarray(S, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(S <= 0) or np.any(rho <= 0):
        raise ValueError("stopping power and density must be positive")
    return psi_t / (S * rho)


def accumulate_dose(dose, state, rho, dt, weights, stopping_power=1.0):
    """Add ``dt * S * phi / rho`` to ``dose`` in place and return it.

    ``phi`` is the scalar flux of ``state`` (anything with a
    ``scalar_flux(weights)`` method). The stopping-power factor converts the
    pseudo-time increment back to an energy increment.
    """
    phi = state.scalar_flux(weights)
    dose += (dt * stopping_power) * phi / rho
    return dose


@dataclass(frozen=True)
class BeamModel:
    """Gaussian pencil beam entering through the domain boundary."""

    amplitude: float = 1e5
    x_mean: float = 7.25
    y_mean: float = 14.5
    omega1_mean: float = 1.0
    inv_var_omega: float = 75.0
    inv_var_x: float = 20.0
    inv_var_y: float = 20.0
    inv_var_e: float = 100.0
    e_max: float = 21.0

    def __post_init__(self):
        for name in ("inv_var_omega", "inv_var_x", "inv_var_y", "inv_var_e"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.amplitude < 0:
            raise ValueError("beam amplitude must be nonnegative")

    def energy_factor(self, E) -> float:
        return float(np.exp(-((self.e_max - E) ** 2) * self.inv_var_e))

    def __call__(self, E, x, y, omega1):
        return eval_beam(self, E, x, y, omega1)


def eval_beam(beam: BeamModel, E, x, y, omega1):
    """Product of Gaussians in direction, energy and both space coordinates."""
    x, y, omega1 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, omega1)))
    return (beam.amplitude
            * np.exp(-((beam.omega1_mean - omega1) ** 2) * beam.inv_var_omega)
            * np.exp(-((beam.e_max - E) ** 2) * beam.inv_var_e)
            * np.exp(-((beam.x_mean - x) ** 2) * beam.inv_var_x)
            * np.exp(-((beam.y_mean - y) ** 2) * beam.inv_var_y))


def ct_to_density(gray, rho_bone=RHO_BONE, rho_min=RHO_MIN, fill_air=True,
                  air_level=0.05, tissue_density=1.0):
    """Affine gray-value to density map (0 -> rho_min, 1 -> rho_bone).

    With ``fill_air`` the dark region connected to the image border (air
    around the patient) gets ``tissue_density`` instead.
    """
    gray = np.asarray(gray, dtype=float)
    if not np.all(np.isfinite(gray)) or gray.min() < 0.0 or gray.max() > 1.0:
        raise ValueError("gray values must lie in [0, 1]")
    rho = rho_min + (rho_bone - rho_min) * gray
    if fill_air and gray.ndim == 2:
        labels, _ = ndimage.label(gray <= air_level)
        border = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
        border = border[border > 0]
        outside = np.isin(labels, border)
        if outside.any():
            logger.info("filled %d outside-air pixels with density %g",
                        int(outside.sum()), tissue_density)
        rho[outside] = tissue_density
    return rho


def read_pgm(path) -> np.ndarray:
    """Plain (P2) PGM reader returning gray values scaled to [0, 1], shape ``(H, W)``."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM (P2) file")
    try:
        width, height, maxval = (int(v) for v in tokens[1:4])
        pixels = np.array([int(v) for v in tokens[4:]], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PGM header or pixel data") from exc
    if pixels.size != width * height or maxval <= 0:
        raise ValueError(f"{path}: expected {width * height} pixels, found {pixels.size}")
    return pixels.reshape(height, width) / maxval


def image_to_field(img) -> np.ndarray:
    """Image rows (top to bottom) to a grid field indexed ``[i_x, j_y]``."""
    img = np.asarray(img)
    return img[::-1, :].T.copy()


def read_image(path) -> np.ndarray:
    """Gray image from PGM (P2) or CSV as a grid field ``[i_x, j_y]`` in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    if path.suffix.lower() == ".pgm":
        return image_to_field(read_pgm(path))
    img = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return image_to_field(img)
