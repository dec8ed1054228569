"""Low-rank factors and basis-update integrators (fixed rank, rank adaptive, implicit L-step)."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Protocol, Sequence

import numpy as np

from .errors import NumericalError


@dataclass
class LowRankFactors:
    """``u = X S W^T`` with column-orthonormal ``X`` (n_x x r) and ``W`` (m x r)."""

    X: np.ndarray
    S: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        r = self.S.shape[0]
        if self.S.shape != (r, r) or self.X.shape[1] != r or self.W.shape[1] != r:
            raise ValueError(f"inconsistent factor shapes X{self.X.shape} "
                             f"S{self.S.shape} W{self.W.shape}")

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape[0], self.W.shape[0]

    def full(self) -> np.ndarray:
        return self.X @ self.S @ self.W.T

    def norm(self) -> float:
        """Frobenius norm of the represented matrix."""
        return float(np.linalg.norm(self.S))

    def copy(self) -> "LowRankFactors":
        return LowRankFactors(self.X.copy(), self.S.copy(), self.W.copy())

    def orthonormality_defect(self) -> float:
        r = self.rank
        eye = np.eye(r)
        return float(max(np.linalg.norm(self.X.T @ self.X - eye),
                         np.linalg.norm(self.W.T @ self.W - eye)))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.S).all() and np.isfinite(self.X).all()
                    and np.isfinite(self.W).all())

    @classmethod
    def zeros(cls, n_x: int, m: int, r: int) -> "LowRankFactors":
        """Rank-``r`` zero matrix with coordinate-vector bases."""
        if not 1 <= r <= min(n_x, m):
            raise ValueError(f"rank {r} outside [1, {min(n_x, m)}]")
        return cls(np.eye(n_x, r), np.zeros((r, r)), np.eye(m, r))

    @classmethod
    def from_matrix(cls, u: np.ndarray, r: int | None = None) -> "LowRankFactors":
        """Best rank-``r`` factors of a dense matrix via SVD."""
        U, s, Vt = np.linalg.svd(u, full_matrices=False)
        r = len(s) if r is None else min(r, len(s))
        return cls(U[:, :r].copy(), np.diag(s[:r]), Vt[:r].T.copy())


class QRInfo(NamedTuple):
    Q: np.ndarray
    R: np.ndarray
    deficient: np.ndarray


def orthonormalize(M: np.ndarray, return_info: bool = False, rtol: float = 1e-12):
    """Reduced QR with nonnegative ``diag(R)``.

    Householder reflections keep ``Q`` orthonormal even when ``M`` is rank
    deficient; the columns whose pivot ``|R_jj|`` is below
    ``rtol * max|R_jj|`` are then arbitrary completion directions orthogonal
    to the range and are reported in ``deficient``.
    """
    M = np.asarray(M, dtype=float)
    Q, R = np.linalg.qr(M)
    d = np.diag(R)
    signs = np.where(d < 0, -1.0, 1.0)
    Q = Q * signs
    R = signs[:, None] * R
    if not return_info:
        return Q, R
    d = np.abs(np.diag(R))
    scale = d.max() if d.size else 0.0
    deficient = d <= rtol * scale if scale > 0 else np.ones(d.size, dtype=bool)
    return QRInfo(Q, R, deficient)


def augment(basis: np.ndarray, new: np.ndarray) -> np.ndarray:
    """Orthonormal ``[basis, extra]`` whose range contains ``new``.

    ``basis`` is kept bit-for-bit as the leading block. The result has
    ``min(n, r + p)`` columns; missing range directions are filled with
    completion vectors.
    """
    n, r = basis.shape
    Q, _ = np.linalg.qr(np.hstack([basis, new]))
    extra = Q[:, r:min(n, r + new.shape[1])]
    # one re-orthogonalisation pass against the kept block
    extra = extra - basis @ (basis.T @ extra)
    extra, _ = orthonormalize(extra)
    return np.hstack([basis, extra])


class Flow(Protocol):
    def k_rhs(self, K: np.ndarray, W: np.ndarray) -> np.ndarray: ...
    def l_rhs(self, L: np.ndarray, X: np.ndarray) -> np.ndarray: ...
    def s_rhs(self, S, Xl, Wl, Xr=None, Wr=None) -> np.ndarray: ...


class LinearFlow:
    """Right-hand side ``F(u) = sum_i Ls_i u Ad_i^T``.

    Each term pairs a sparse spatial matrix with a dense directional one.
    The projected flows of the integrators are evaluated without forming
    ``u``.
    """

    def __init__(self, terms: Sequence[tuple]):
        self.terms = [(Ls, np.asarray(Ad, dtype=float)) for Ls, Ad in terms]

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u, dtype=float)
        for Ls, Ad in self.terms:
            out += Ls @ (u @ Ad.T)
        return out

    def k_rhs(self, K, W):
        """``F(K W^T) W``."""
        out = np.zeros_like(K)
        for Ls, Ad in self.terms:
            out += Ls @ (K @ (W.T @ Ad.T @ W))
        return out

    def l_rhs(self, L, X):
        """``X^T F(X L)`` for ``L`` of shape ``r x m``."""
        out = np.zeros_like(L)
        for Ls, Ad in self.terms:
            out += (X.T @ (Ls @ X)) @ L @ Ad.T
        return out

    def s_rhs(self, S, Xl, Wl, Xr=None, Wr=None):
        """``Xl^T F(Xr S Wr^T) Wl``; the right bases default to the left ones."""
        Xr = Xl if Xr is None else Xr
        Wr = Wl if Wr is None else Wr
        out = np.zeros((Xl.shape[1], Wl.shape[1]))
        for Ls, Ad in self.terms:
            out += (Xl.T @ (Ls @ Xr)) @ S @ (Wr.T @ Ad.T @ Wl)
        return out


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite values in the {name}")


def bug_step(factors: LowRankFactors, flow: Flow, dt: float) -> LowRankFactors:
    """One explicit-Euler fixed-rank basis-update & Galerkin step."""
    X0, S0, W0 = factors.X, factors.S, factors.W
    K0 = X0 @ S0
    K1 = K0 + dt * flow.k_rhs(K0, W0)
    L0 = S0 @ W0.T
    L1 = L0 + dt * flow.l_rhs(L0, X0)
    _check_finite("K/L update", K1, L1)
    X1, _ = orthonormalize(K1)
    W1, _ = orthonormalize(L1.T)
    S_tilde = (X1.T @ X0) @ S0 @ (W0.T @ W1)
    S1 = S_tilde + dt * flow.s_rhs(S_tilde, X1, W1)
    _check_finite("S update", S1)
    return LowRankFactors(X1, S1, W1)


class TruncationMode(str, Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"


@dataclass(frozen=True)
class TruncationPolicy:
    theta: float = 0.0
    mode: TruncationMode = TruncationMode.ABSOLUTE
    r_min: int = 1
    r_max: int = 10**9

    def __post_init__(self):
        object.__setattr__(self, "mode", TruncationMode(self.mode))
        if self.theta < 0:
            raise ValueError(f"truncation tolerance must be nonnegative, got {self.theta}")
        if not 1 <= self.r_min <= self.r_max:
            raise ValueError(f"need 1 <= r_min <= r_max, got {self.r_min}, {self.r_max}")

    def tolerance(self, s_norm: float) -> float:
        if self.mode is TruncationMode.RELATIVE:
            return self.theta * s_norm
        return self.theta


def truncation_rank(sigma: np.ndarray, tol: float) -> int:
    """Smallest ``r`` whose discarded tail ``sqrt(sum_{i>=r} sigma_i^2)`` is at most ``tol``."""
    tail_sq = np.concatenate([np.cumsum((sigma ** 2)[::-1])[::-1], [0.0]])
    ok = np.sqrt(tail_sq) <= tol
    return int(np.argmax(ok))


def truncate(S_hat, X_hat, W_hat, policy: TruncationPolicy) -> LowRankFactors:
    """SVD truncation of ``X_hat S_hat W_hat^T`` to the policy tolerance.

    The tolerance is reduced by a round-off margin so that the discarded tail
    plus the error of the SVD rotation stays within it. When nothing can be
    discarded from a square ``S_hat`` the factors are returned unrotated.
    """
    P, sigma, Qt = np.linalg.svd(S_hat)
    s_norm = float(np.linalg.norm(sigma))
    margin = 8 * len(sigma) * np.finfo(float).eps * s_norm
    tol = max(policy.tolerance(s_norm) - margin, 0.0)
    r1 = truncation_rank(sigma, tol)
    r1 = min(max(r1, policy.r_min), policy.r_max, len(sigma))
    if r1 == len(sigma) and S_hat.shape[0] == S_hat.shape[1]:
        return LowRankFactors(X_hat, np.array(S_hat, dtype=float), W_hat)
    return LowRankFactors(X_hat @ P[:, :r1], np.diag(sigma[:r1]), W_hat @ Qt[:r1].T)


def adaptive_bug_step(factors: LowRankFactors, flow: Flow, dt: float,
                      policy: TruncationPolicy) -> LowRankFactors:
    """Rank-adaptive step: augment both bases with the updated ones, Galerkin, truncate."""
    X0, S0, W0 = factors.X, factors.S, factors.W
    K0 = X0 @ S0
    K1 = K0 + dt * flow.k_rhs(K0, W0)
    L0 = S0 @ W0.T
    L1 = L0 + dt * flow.l_rhs(L0, X0)
    _check_finite("K/L update", K1, L1)
    X_hat = augment(X0, K1)
    W_hat = augment(W0, L1.T)
    S_hat = pad(S0, X_hat.shape[1], W_hat.shape[1])
    S_hat += dt * flow.s_rhs(S0, X_hat, W_hat, X0, W0)
    _check_finite("S update", S_hat)
    return truncate(S_hat, X_hat, W_hat, policy)


def pad(S: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """``[I, 0]^T S [I, 0]``: embed ``S`` in the top-left corner."""
    out = np.zeros((rows, cols))
    out[:S.shape[0], :S.shape[1]] = S
    return out


def psi_l_step_scatter(factors: LowRankFactors, sigma_t: float, sigma_kk: np.ndarray,
                       dt: float) -> LowRankFactors:
    """Implicit self-scattering applied to the directional factor only.

    Scales column ``k`` of ``S W^T`` by ``1 / (1 + dt sigma_t - dt sigma_kk[k])``
    and refactorises; the spatial basis is left untouched.
    """
    denom = 1.0 + dt * sigma_t - dt * np.asarray(sigma_kk, dtype=float)
    if np.any(denom <= 0):
        raise NumericalError("implicit scattering denominator is not positive; "
                             "reduce the step size")
    L = (factors.S @ factors.W.T) / denom
    _check_finite("scattering L-step", L)
    W1, R = orthonormalize(L.T)
    return LowRankFactors(factors.X, R.T.copy(), W1)
