import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csdlra.angular import FOUR_PI, build_quadrature
from csdlra.grid import build_grid, build_stencils
from csdlra.physics import (
    BeamModel,
    CrossSectionModel,
    accumulate_dose,
    ct_to_density,
    image_to_field,
    inverse_transform_density,
    linear_stopping_power,
    read_image,
    read_pgm,
    read_table,
    tabulated,
    transform_density,
)


class Nodal:
    def __init__(self, psi):
        self.psi = psi

    def scalar_flux(self, weights):
        return self.psi @ weights


class ZerothMoment:
    def __init__(self, u0):
        self.u0 = u0

    def scalar_flux(self, weights):
        return np.sqrt(FOUR_PI) * self.u0


def test_pseudo_time_vanishes_at_max_energy():
    xs = CrossSectionModel(21.0, linear_stopping_power(1.8, 0.01))
    assert xs.pseudo_time(21.0) == 0.0
    assert xs.energy_of(0.0) == 21.0


def test_unit_stopping_power_gives_linear_map():
    xs = CrossSectionModel.unit(e_max=5.0)
    for E in (0.0, 1.3, 4.99):
        assert xs.pseudo_time(E) == pytest.approx(5.0 - E, abs=1e-12)
    assert xs.t_end == pytest.approx(5.0)


def test_energy_round_trip_linear_stopping_power():
    a, b, e_max = 1.8, 0.01, 21.0
    xs = CrossSectionModel(e_max, linear_stopping_power(a, b))
    rng = np.random.default_rng(7)
    for E in rng.uniform(xs.e_cut, e_max, 20):
        t = xs.pseudo_time(E)
        exact = np.log((a + b * e_max) / (a + b * E)) / b
        assert t == pytest.approx(exact, rel=1e-11)
        assert xs.energy_of(t) == pytest.approx(E, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(e1=st.floats(0.1, 20.0), e2=st.floats(0.1, 20.0))
def test_pseudo_time_strictly_decreasing(e1, e2):
    xs = CrossSectionModel.lung_default()
    if abs(e1 - e2) < 1e-6:
        return
    lo, hi = sorted((e1, e2))
    assert xs.pseudo_time(lo) > xs.pseudo_time(hi)


def test_energy_of_rejects_out_of_range():
    xs = CrossSectionModel.unit(e_max=1.0)
    with pytest.raises(ValueError):
        xs.energy_of(2.0)
    with pytest.raises(ValueError):
        xs.pseudo_time(1.5)


def test_nonpositive_stopping_power_rejected():
    with pytest.raises(ValueError):
        CrossSectionModel(2.0, linear_stopping_power(1.0, -1.0))


def test_transform_density():
    assert transform_density(1.0, 2.0, 3.0) == 6.0
    rng = np.random.default_rng(0)
    psi = rng.random((5, 4))
    S = rng.uniform(1, 2, (5, 1))
    rho = rng.uniform(0.05, 2, (5, 1))
    back = inverse_transform_density(transform_density(psi, S, rho), S, rho)
    assert np.allclose(back, psi, rtol=1e-15, atol=0)
    assert np.array_equal(transform_density(psi, 1.0, 1.0), psi)
    with pytest.raises(ValueError):
        transform_density(psi, 0.0, 1.0)


def test_unit_density_stencils_are_plain():
    g = build_grid(5, 4, 0.2, 0.3)
    st_ = build_stencils(g)
    for t, l in (("T1x", "L1x"), ("T1y", "L1y"), ("T2x", "L2x"), ("T2y", "L2y")):
        assert (getattr(st_, t) != getattr(st_, l)).nnz == 0


def test_dose_of_zero_state_unchanged():
    dose = np.arange(4.0)
    accumulate_dose(dose, Nodal(np.zeros((4, 3))), np.ones(4), 0.1, np.ones(3))
    assert np.array_equal(dose, np.arange(4.0))


def test_dose_from_zeroth_moment():
    u0 = np.zeros(3)
    u0[1] = 1.0
    dose = accumulate_dose(np.zeros(3), ZerothMoment(u0), np.ones(3), 0.1, None)
    assert dose[1] == pytest.approx(np.sqrt(FOUR_PI) * 0.1, rel=1e-15)
    assert dose[0] == 0.0


def test_dose_from_uniform_nodal_field():
    q = build_quadrature(6)
    rho = np.array([1.0, 0.5, 2.0])
    dose = accumulate_dose(np.zeros(3), Nodal(np.ones((3, q.n_q))), rho, 0.2, q.weights)
    assert np.allclose(dose, 0.2 * FOUR_PI / rho, rtol=1e-13)


def test_dose_includes_stopping_power():
    dose = accumulate_dose(np.zeros(1), ZerothMoment(np.ones(1)), np.ones(1), 0.5, None, 3.0)
    assert dose[0] == pytest.approx(1.5 * np.sqrt(FOUR_PI))


def test_dose_invariant_under_quadrature_permutation():
    q = build_quadrature(5)
    rng = np.random.default_rng(3)
    psi = rng.random((6, q.n_q))
    perm = rng.permutation(q.n_q)
    a = accumulate_dose(np.zeros(6), Nodal(psi), np.ones(6), 0.1, q.weights)
    b = accumulate_dose(np.zeros(6), Nodal(psi[:, perm]), np.ones(6), 0.1, q.weights[perm])
    assert np.allclose(a, b, rtol=1e-13)


def test_beam_peak_and_defaults():
    beam = BeamModel()
    assert (beam.x_mean, beam.y_mean, beam.e_max) == (7.25, 14.5, 21.0)
    assert (beam.inv_var_omega, beam.inv_var_x, beam.inv_var_y, beam.inv_var_e) == \
        (75.0, 20.0, 20.0, 100.0)
    assert beam(21.0, 7.25, 14.5, 1.0) == pytest.approx(1e5)


def test_beam_even_in_direction():
    beam = BeamModel()
    d = 0.07
    assert beam(20.9, 7.3, 14.4, 1.0 - d) == pytest.approx(beam(20.9, 7.3, 14.4, 1.0 + d))


def test_beam_rejects_bad_parameters():
    with pytest.raises(ValueError):
        BeamModel(inv_var_x=0.0)


def test_ct_mapping_anchors():
    rho = ct_to_density(np.array([[1.0, 0.0, 0.5]]), fill_air=False)
    assert np.allclose(rho, [[1.85, 0.05, 0.95]])
    with pytest.raises(ValueError):
        ct_to_density(np.array([1.2]))


def test_ct_outside_air_is_filled():
    gray = np.zeros((6, 6))
    gray[1:5, 1:5] = 0.6
    gray[2:4, 2:4] = 0.0  # enclosed cavity keeps its low density
    rho = ct_to_density(gray, fill_air=True)
    assert rho[0, 0] == 1.0
    assert rho[2, 2] == pytest.approx(0.05)


def test_read_pgm_and_orientation(tmp_path):
    path = tmp_path / "img.pgm"
    path.write_text("P2\n# comment\n3 2\n10\n0 5 10\n10 10 0\n")
    img = read_pgm(path)
    assert img.shape == (2, 3)
    assert img[0, 2] == 1.0
    field = read_image(path)
    # bottom image row becomes j = 0
    assert field.shape == (3, 2)
    assert np.array_equal(field[:, 0], [1.0, 1.0, 0.0])
    assert np.array_equal(image_to_field(img), field)


def test_read_pgm_rejects_garbage(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_text("P5\n1 1\n255\n0\n")
    with pytest.raises(ValueError):
        read_pgm(path)


def test_read_table(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("# stopping power\nE,S\n1.0,2.0\n3.0,4.0\n")
    e, v = read_table(path)
    assert np.array_equal(e, [1.0, 3.0])
    assert tabulated(e, v)(2.0) == pytest.approx(3.0)
