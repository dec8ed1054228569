"""Real spherical harmonics, P_N flux matrices, quadratures and scattering moments."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import eval_legendre, gammaln, lpmv

from .errors import NumericalError

FOUR_PI = 4.0 * np.pi


def n_moments(N: int) -> int:
    return (N + 1) ** 2


def flat_index(ell: int, k: int) -> int:
    """0-based position of harmonic ``(ell, k)`` in the moment vector."""
    if ell < 0 or abs(k) > ell:
        raise IndexError(f"no harmonic with degree {ell} and order {k}")
    return ell * ell + ell + k


def degree_table(N: int) -> np.ndarray:
    """Degree ``ell`` of every flat moment index."""
    return np.concatenate([np.full(2 * ell + 1, ell) for ell in range(N + 1)])


def _norm(ell, k):
    k = abs(k)
    return np.sqrt((2 * ell + 1) / FOUR_PI * np.exp(gammaln(ell - k + 1) - gammaln(ell + k + 1)))


def direction_angles(omega):
    """``(mu, phi)`` of unit vectors stacked along the last axis, ``mu = Omega_z``."""
    omega = np.asarray(omega, dtype=float)
    mu = np.clip(omega[..., 2], -1.0, 1.0)
    phi = np.arctan2(omega[..., 1], omega[..., 0])
    return mu, phi


def _sh_from_angles(ell, k, mu, phi):
    ak = abs(k)
    # lpmv includes the Condon-Shortley phase; (-1)^k removes it again
    plm = lpmv(ak, ell, mu)
    if k == 0:
        return _norm(ell, 0) * plm
    base = np.sqrt(2.0) * _norm(ell, ak) * (-1.0) ** ak * plm
    return base * (np.cos(ak * phi) if k > 0 else np.sin(ak * phi))


def eval_real_sh(ell: int, k: int, omega) -> np.ndarray:
    """Orthonormal real harmonic ``m_ell^k`` at unit vector(s) ``omega``."""
    if ell < 0 or abs(k) > ell:
        raise IndexError(f"no harmonic with degree {ell} and order {k}")
    mu, phi = direction_angles(omega)
    return _sh_from_angles(ell, k, mu, phi)


def sh_matrix(N: int, mu, phi) -> np.ndarray:
    """All harmonics up to degree ``N``: shape ``(n_points, (N+1)^2)``."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    out = np.empty((mu.size, n_moments(N)))
    for ell in range(N + 1):
        for k in range(-ell, ell + 1):
            out[:, flat_index(ell, k)] = _sh_from_angles(ell, k, mu, phi)
    return out


@dataclass(frozen=True)
class Quadrature:
    """Weighted point set on the unit sphere plus its nodal-to-moment matrix."""

    points: np.ndarray
    weights: np.ndarray
    T_M: np.ndarray | None = None
    order: int = 0

    @property
    def n_q(self) -> int:
        return len(self.weights)

    @property
    def omega_x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def omega_y(self) -> np.ndarray:
        return self.points[:, 1]

    def subset(self, mask) -> "Quadrature":
        mask = np.asarray(mask, dtype=bool)
        T_M = None if self.T_M is None else self.T_M[mask]
        return Quadrature(self.points[mask], self.weights[mask], T_M, self.order)


def _tensor_nodes(order):
    mu, wmu = np.polynomial.legendre.leggauss(order)
    n_phi = 2 * order
    phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
    mu_g, phi_g = np.meshgrid(mu, phi, indexing="ij")
    w = np.outer(wmu, np.full(n_phi, 2.0 * np.pi / n_phi))
    return mu_g.ravel(), phi_g.ravel(), w.ravel()


def build_quadrature(order: int, n_degree: int | None = None) -> Quadrature:
    """Gauss-Legendre in ``mu`` times ``2*order`` uniform azimuths.

    Integrates spherical polynomials up to degree ``2*order - 1`` exactly.
    ``T_M`` is built for harmonics up to ``n_degree`` (default ``order - 1``,
    the largest degree for which the moment map is exact).
    """
    if order < 2:
        raise ValueError(f"quadrature order must be at least 2, got {order}")
    if n_degree is None:
        n_degree = order - 1
    mu, phi, w = _tensor_nodes(order)
    s = np.sqrt(1.0 - mu * mu)
    points = np.column_stack([s * np.cos(phi), s * np.sin(phi), mu])
    T_M = w[:, None] * sh_matrix(n_degree, mu, phi)
    return Quadrature(points, w, T_M, order)


def build_directed_quadrature(order, beam_dir=(1.0, 0.0, 0.0), cone_half_angle=None,
                              n_degree=None) -> Quadrature:
    """Subset of :func:`build_quadrature` inside a cone around ``beam_dir``.

    Weights are kept as they are. ``cone_half_angle`` defaults to
    ``arccos(0.102)``.
    """
    if cone_half_angle is None:
        cone_half_angle = np.arccos(0.102)
    if not 0.0 < cone_half_angle <= np.pi:
        raise ValueError(f"cone half-angle must lie in (0, pi], got {cone_half_angle}")
    d = np.asarray(beam_dir, dtype=float)
    d = d / np.linalg.norm(d)
    full = build_quadrature(order, n_degree)
    if cone_half_angle >= np.pi:
        return full
    keep = full.points @ d >= np.cos(cone_half_angle)
    if not keep.any():
        raise ValueError(f"no quadrature point of order {order} lies within "
                         f"{cone_half_angle:.4g} rad of the beam direction")
    return full.subset(keep)


def roe_matrix(A):
    """Symmetric eigendecomposition with a deterministic sign convention.

    Returns ``(V, lam, absA)`` where each eigenvector has its largest-magnitude
    entry (lowest index on ties) positive and ``absA = V |lam| V^T``.
    """
    A = 0.5 * (A + A.T)
    lam, V = np.linalg.eigh(A)
    pivot = np.argmax(np.abs(V) - 1e-12 * np.arange(V.shape[0])[:, None], axis=0)
    signs = np.sign(V[pivot, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    V = V * signs
    absA = (V * np.abs(lam)) @ V.T
    return V, lam, 0.5 * (absA + absA.T)


@dataclass(frozen=True)
class PnBasis:
    N: int
    degrees: np.ndarray
    A_x: np.ndarray
    A_y: np.ndarray
    absA_x: np.ndarray
    absA_y: np.ndarray
    V_x: np.ndarray
    Lambda_x: np.ndarray
    V_y: np.ndarray
    Lambda_y: np.ndarray

    @property
    def m(self) -> int:
        return n_moments(self.N)

    @property
    def lambda_max(self) -> float:
        return float(max(np.abs(self.Lambda_x).max(), np.abs(self.Lambda_y).max()))

    def index(self, ell, k):
        return flat_index(ell, k)


@lru_cache(maxsize=16)
def build_pn_basis(N: int) -> PnBasis:
    """Flux matrices ``A_i = int m m^T Omega_i`` and their Roe matrices."""
    if N < 1:
        raise ValueError(f"P_N degree must be at least 1, got {N}")
    mu, phi, w = _tensor_nodes(N + 2)
    M = sh_matrix(N, mu, phi)
    s = np.sqrt(1.0 - mu * mu)
    mats = []
    for om in (s * np.cos(phi), s * np.sin(phi)):
        A = M.T @ ((w * om)[:, None] * M)
        mats.append(0.5 * (A + A.T))
    A_x, A_y = mats
    V_x, lam_x, abs_x = roe_matrix(A_x)
    V_y, lam_y, abs_y = roe_matrix(A_y)
    for arr in (A_x, A_y, abs_x, abs_y, V_x, V_y, lam_x, lam_y):
        arr.setflags(write=False)
    return PnBasis(N, degree_table(N), A_x, A_y, abs_x, abs_y, V_x, lam_x, V_y, lam_y)


Kernel = Callable[[float, np.ndarray], np.ndarray]


class ScatterDiagonal:
    """Diagonal in-scattering matrix as a function of pseudo-time.

    ``kernel(t, mu)`` is the differential cross section in the cosine of the
    scattering angle. The entry for harmonic ``(ell, k)`` is
    ``2 pi int P_ell(mu) kernel(t, mu) dmu`` and the total cross section is the
    degree-zero entry.
    """

    def __init__(self, kernel: Kernel, N: int, n_nodes: int | None = None,
                 total: Callable[[float], float] | None = None):
        self.kernel = kernel
        self.total = total
        self.N = N
        self.degrees = degree_table(N)
        n_nodes = n_nodes or max(2 * N + 2, 256)
        self._mu, self._w = np.polynomial.legendre.leggauss(n_nodes)
        self._P = np.stack([eval_legendre(ell, self._mu) for ell in range(N + 1)])
        self._cache: dict[float, np.ndarray] = {}

    def legendre_moments(self, t: float) -> np.ndarray:
        """``2 pi int P_ell kernel dmu`` for ``ell = 0..N``."""
        t = float(t)
        hit = self._cache.get(t)
        if hit is not None:
            return hit
        vals = np.asarray(self.kernel(t, self._mu), dtype=float)
        if vals.shape != self._mu.shape:
            vals = np.broadcast_to(vals, self._mu.shape)
        if not np.all(np.isfinite(vals)):
            raise NumericalError(f"scattering kernel returned non-finite values at t={t}")
        mom = 2.0 * np.pi * (self._P @ (self._w * vals))
        if self.total is None and np.any(np.abs(mom) > mom[0] * (1 + 1e-12) + 1e-300):
            raise NumericalError(f"scattering moments exceed the total cross section at t={t}")
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[t] = mom
        return mom

    def sigma_kk(self, t: float) -> np.ndarray:
        return self.legendre_moments(t)[self.degrees]

    def sigma_t(self, t: float) -> float:
        if self.total is not None:
            return float(self.total(t))
        return float(self.legendre_moments(t)[0])

    def admissible(self, t: float) -> bool:
        """Whether no diagonal entry exceeds the total cross section at ``t``."""
        return bool(np.all(np.abs(self.sigma_kk(t)) <= self.sigma_t(t) * (1 + 1e-12)))


def build_scatter_diagonal(kernel: Kernel, N: int, n_nodes: int | None = None,
                           total=None) -> ScatterDiagonal:
    """Scattering diagonal for harmonics up to degree ``N``.

    ``total`` overrides the total cross section (default: the degree-zero
    moment); only then may the kernel violate the moment bound.
    """
    if N < 0:
        raise ValueError(f"degree must be nonnegative, got {N}")
    return ScatterDiagonal(kernel, N, n_nodes, total)


def isotropic_kernel(c=1.0):
    """Kernel with ``2 pi int kernel dmu = c`` (constant or function of ``t``)."""
    def kernel(t, mu):
        ct = c(t) if callable(c) else c
        return np.full_like(mu, ct / FOUR_PI)
    return kernel


def henyey_greenstein(mu, g):
    """Normalized HG phase function in the scattering cosine: ``2 pi int p dmu = 1``."""
    mu = np.asarray(mu, dtype=float)
    return (1.0 - g * g) / (FOUR_PI * (1.0 + g * g - 2.0 * g * mu) ** 1.5)


def hg_kernel(c=1.0, g=0.5):
    """``c * HG(g)`` with ``c`` and ``g`` constants or functions of pseudo-time."""
    def kernel(t, mu):
        ct = c(t) if callable(c) else c
        gt = g(t) if callable(g) else g
        return ct * henyey_greenstein(mu, gt)
    return kernel
