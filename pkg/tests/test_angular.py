import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from csdlra.angular import (
    FOUR_PI,
    build_directed_quadrature,
    build_pn_basis,
    build_quadrature,
    build_scatter_diagonal,
    eval_real_sh,
    flat_index,
    henyey_greenstein,
    hg_kernel,
    isotropic_kernel,
    n_moments,
    roe_matrix,
    sh_matrix,
)
from csdlra.errors import NumericalError


def unit_vectors(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_flat_index_layout():
    assert [flat_index(0, 0), flat_index(1, -1), flat_index(1, 0), flat_index(1, 1),
            flat_index(2, -2)] == [0, 1, 2, 3, 4]
    assert n_moments(21) == 484
    with pytest.raises(IndexError):
        flat_index(1, 2)


def test_constant_harmonic(rng):
    om = unit_vectors(rng, 50)
    assert np.allclose(eval_real_sh(0, 0, om), 1 / np.sqrt(FOUR_PI), atol=1e-15)


def test_degree_one_zonal_harmonic(rng):
    om = unit_vectors(rng, 50)
    assert np.allclose(eval_real_sh(1, 0, om), np.sqrt(3 / FOUR_PI) * om[:, 2], atol=1e-14)


def test_degree_one_sectoral_harmonics_are_cartesian(rng):
    om = unit_vectors(rng, 20)
    c = np.sqrt(3 / FOUR_PI)
    assert np.allclose(eval_real_sh(1, 1, om), c * om[:, 0], atol=1e-14)
    assert np.allclose(eval_real_sh(1, -1, om), c * om[:, 1], atol=1e-14)


def test_harmonics_orthonormal_up_to_degree_9():
    q = build_quadrature(12, n_degree=9)
    mu, phi = q.points[:, 2], np.arctan2(q.points[:, 1], q.points[:, 0])
    M = sh_matrix(9, mu, phi)
    G = M.T @ (q.weights[:, None] * M)
    assert np.abs(G - np.eye(100)).max() < 1e-12


def test_quadrature_sizes():
    assert build_quadrature(22).n_q == 968
    full = build_quadrature(10)
    assert full.weights.sum() == pytest.approx(FOUR_PI, rel=1e-13)
    directed = build_directed_quadrature(22)
    assert directed.n_q == 396
    assert 1 - directed.n_q / 968 > 0.59


def test_full_cone_equals_full_set():
    full = build_quadrature(6)
    same = build_directed_quadrature(6, cone_half_angle=np.pi)
    assert np.array_equal(full.points, same.points)
    assert np.array_equal(full.weights, same.weights)


def test_directed_set_lies_in_cone():
    q = build_directed_quadrature(16, (1, 0, 0), np.arccos(0.5))
    assert np.all(q.points[:, 0] >= 0.5)


def test_moment_map_round_trip(rng):
    N = 4
    q = build_quadrature(2 * N + 2, n_degree=N)
    mu, phi = q.points[:, 2], np.arctan2(q.points[:, 1], q.points[:, 0])
    u = rng.standard_normal((3, n_moments(N)))
    psi = u @ sh_matrix(N, mu, phi).T
    assert np.abs(psi @ q.T_M - u).max() < 1e-10


def test_flux_matrix_entry_n1():
    b = build_pn_basis(1)
    e = b.A_x[flat_index(0, 0), flat_index(1, 1)]
    assert abs(e) == pytest.approx(1 / np.sqrt(3), rel=1e-13)
    assert b.A_x[flat_index(0, 0), flat_index(1, 1)] == b.A_x[flat_index(1, 1), flat_index(0, 0)]


def test_flux_matrix_against_brute_quadrature():
    N = 3
    b = build_pn_basis(N)
    q = build_quadrature(12, n_degree=N)
    mu, phi = q.points[:, 2], np.arctan2(q.points[:, 1], q.points[:, 0])
    M = sh_matrix(N, mu, phi)
    Ay = M.T @ ((q.weights * q.points[:, 1])[:, None] * M)
    assert np.abs(Ay - b.A_y).max() < 1e-13


def test_roe_of_diagonal():
    a = np.array([-2.0, 0.5, 3.0])
    V, lam, absA = roe_matrix(np.diag(a))
    assert np.allclose(absA, np.diag(np.abs(a)))


def test_roe_reconstruction_and_signs(rng):
    B = rng.standard_normal((6, 6))
    A = B + B.T
    V, lam, absA = roe_matrix(A)
    assert np.allclose(V @ np.diag(lam) @ V.T, A, atol=1e-12)
    assert np.allclose(absA @ absA, A @ A, atol=1e-10)
    for col in V.T:
        assert col[np.argmax(np.abs(col))] > 0


def test_lambda_max_bounded_by_one():
    assert build_pn_basis(21).m == 484
    assert build_pn_basis(21).lambda_max <= 1.0
    assert build_pn_basis(1).lambda_max == pytest.approx(1 / np.sqrt(3), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), N=st.integers(1, 5))
def test_flux_quadratic_form_bounded(seed, N):
    b = build_pn_basis(N)
    v = np.random.default_rng(seed).standard_normal(b.m)
    for A in (b.A_x, b.A_y):
        assert abs(v @ A @ v) <= b.lambda_max * (v @ v) * (1 + 1e-12)


def test_isotropic_scatter_moments():
    sd = build_scatter_diagonal(isotropic_kernel(2.5), 4)
    mom = sd.legendre_moments(0.0)
    assert mom[0] == pytest.approx(2.5, rel=1e-14)
    assert np.abs(mom[1:]).max() < 1e-14
    assert sd.sigma_t(0.0) == pytest.approx(2.5)


def test_line_source_cross_sections():
    sd = build_scatter_diagonal(isotropic_kernel(1.0), 7)
    assert sd.sigma_t(0.3) == pytest.approx(1.0, rel=1e-14)
    assert sd.sigma_kk(0.3)[0] == pytest.approx(1.0, rel=1e-14)


def test_henyey_greenstein_moments_are_powers_of_g():
    g = 0.5
    sd = build_scatter_diagonal(hg_kernel(1.0, g), 6)
    assert np.allclose(sd.legendre_moments(0.0), g ** np.arange(7), atol=1e-12)
    # brute-force cross-check with a fine trapezoidal rule
    mu = np.linspace(-1, 1, 200001)
    p2 = 0.5 * (3 * mu ** 2 - 1)
    brute = 2 * np.pi * trapezoid(p2 * henyey_greenstein(mu, g), mu)
    assert brute == pytest.approx(g ** 2, rel=1e-6)


def test_sigma_kk_follows_degree():
    sd = build_scatter_diagonal(hg_kernel(2.0, 0.3), 2)
    s = sd.sigma_kk(0.0)
    assert np.allclose(s, 2.0 * 0.3 ** np.array([0, 1, 1, 1, 2, 2, 2, 2, 2]), atol=1e-12)


def test_inadmissible_kernel_needs_total():
    def bad(t, mu):
        return 0.1 * mu  # zero total, nonzero first moment
    with pytest.raises(NumericalError):
        build_scatter_diagonal(bad, 2).sigma_kk(0.0)
    sd = build_scatter_diagonal(bad, 2, total=lambda t: 0.05)
    assert not sd.admissible(0.0)


def random_admissible_kernel(rng):
    weights = rng.random(3)
    gs = rng.uniform(-0.95, 0.95, 3)
    c = rng.uniform(0.1, 5.0)
    bump = rng.random(4)

    def kernel(t, mu):
        hg = sum(w * henyey_greenstein(mu, g) for w, g in zip(weights, gs))
        poly = np.polynomial.polynomial.polyval(mu, bump) ** 2
        return c * (hg + poly)
    return kernel


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_moment_bound_chain(seed):
    rng = np.random.default_rng(seed)
    kernel = random_admissible_kernel(rng)
    N = 6
    sd = build_scatter_diagonal(kernel, N)
    s = sd.sigma_kk(0.0)
    mu, w = np.polynomial.legendre.leggauss(256)
    vals = np.abs(kernel(0.0, mu))
    mid = np.array([2 * np.pi * np.sum(w * np.abs(np.polynomial.legendre.legval(
        mu, np.eye(N + 1)[ell])) * vals) for ell in range(N + 1)])[sd.degrees]
    assert np.all(np.abs(s) <= mid * (1 + 1e-12))
    assert np.all(mid <= s[0] * (1 + 1e-12))
