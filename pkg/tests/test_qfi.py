import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from centroidqfi.errors import NumericalError, TruncationError
from centroidqfi.qfi import (
    HgOperator,
    SldMeasurement,
    drho1_hg,
    qfi_matrix,
    qfi_one_point,
    qfi_two_point_analytic,
    rho1_hg,
    sld_from_rho,
    sld_measurement,
)
from centroidqfi.scene import GaussianPsf, PhotonBudget, SceneGeometry, psf_derivative, psf_value
from centroidqfi.spade import hg_spade_fisher


def _gaussian_k11(t2, sigma=1.0):
    r2 = (t2 / sigma) ** 2
    return (1 - r2 / 4 * math.exp(-r2 / 4)) / sigma**2


# closed forms -----------------------------------------------------------------


@pytest.mark.parametrize("sigma, n, expect", [(1.0, 1, 1.0), (2.0, 1, 0.25), (1.0, 1000, 1000.0)])
def test_one_point(sigma, n, expect):
    q = qfi_one_point(GaussianPsf(sigma), PhotonBudget(n))
    assert q.total11 == pytest.approx(expect)
    assert not q.k22_defined and q.k22 == 0.0


def test_two_point_overlaps_by_quadrature():
    psf = GaussianPsf()
    t2 = 2.0
    delta, _ = integrate.quad(lambda x: psf_value(psf, x - t2 / 2) * psf_value(psf, x + t2 / 2), -20, 20)
    gamma, _ = integrate.quad(lambda x: psf_derivative(psf, x) * psf_value(psf, x - t2), -20, 20)
    b2, _ = integrate.quad(lambda x: psf_derivative(psf, x - t2 / 2) * psf_derivative(psf, x + t2 / 2), -20, 20)
    q, e = qfi_two_point_analytic(t2)
    assert e.delta == pytest.approx(delta, rel=1e-12) and e.delta == pytest.approx(math.exp(-0.5))
    assert e.gamma == pytest.approx(gamma, rel=1e-12)
    assert abs(e.gamma) == pytest.approx(0.5 * math.exp(-0.5))
    assert e.b_squared == pytest.approx(b2, rel=1e-10)
    assert q.k11 == pytest.approx(1 - math.exp(-1), rel=1e-14)


@given(st.floats(0.05, 12.0), st.floats(0.3, 3.0))
def test_sld_entries_reproduce_closed_form(t2, sigma):
    q, e = qfi_two_point_analytic(t2, GaussianPsf(sigma))
    assert q.k11 == pytest.approx(_gaussian_k11(t2, sigma), rel=1e-12)
    assert e.k11_from_entries() == pytest.approx(q.k11, rel=1e-9)
    assert e.k22_from_entries() == pytest.approx(q.k22, rel=1e-9)
    assert q.k22 == pytest.approx(1 / (4 * sigma**2))


def test_two_point_zero_separation_limit():
    q, e = qfi_two_point_analytic(0.0)
    assert not e.available
    assert q.k11 == 1.0
    assert qfi_two_point_analytic(1e-4)[0].k11 == pytest.approx(1.0, rel=1e-8)


# density operator ----------------------------------------------------------------


def test_rho_single_point_on_axis():
    rho = rho1_hg(SceneGeometry.points(1), None, 10).entries
    expect = np.zeros((11, 11))
    expect[0, 0] = 1.0
    np.testing.assert_array_equal(rho, expect)


def test_rho_two_point_entries():
    rho = rho1_hg(SceneGeometry.points(2, 0.0, 2.0), None, 50).entries
    assert rho[0, 0] == pytest.approx(math.exp(-0.25), rel=1e-14)
    assert rho[0, 1] == 0.0


@pytest.mark.parametrize("geo", [SceneGeometry.points(5, 3.0, 10.0), SceneGeometry.points(2, -3.0, 10.0),
                                 SceneGeometry.line(3.0, 10.0), SceneGeometry.line(0.0, 10.0)])
def test_rho_trace_at_fifty_modes(geo):
    # largest |x| reached here is 8 sigma, where the q_max=50 tail is below 1e-10
    rho = rho1_hg(geo, None, 50)
    assert rho.trace() == pytest.approx(1.0, abs=1e-10)
    assert rho.asymmetry() <= 1e-14


def test_rho_trace_deficit_reported_at_attainability_edge():
    rho = rho1_hg(SceneGeometry.points(2, 5.0, 10.0), None, 50, check=False)
    assert rho.deficit > 1e-10  # a source at 10 sigma needs more than 50 modes
    assert rho.trace() + rho.deficit == pytest.approx(1.0, abs=1e-12)


def test_rho_truncation_error():
    with pytest.raises(TruncationError, match="increase q_max"):
        rho1_hg(SceneGeometry.line(0.0, 40.0), None, 50)


@pytest.mark.parametrize("geo", [SceneGeometry.points(3, 0.4, 2.0), SceneGeometry.points(1, 0.9),
                                 SceneGeometry.line(0.5, 3.0)])
@pytest.mark.parametrize("which", ["theta1", "theta2"])
def test_drho_matches_finite_difference(geo, which):
    if geo.n == 1 and which == "theta2":
        pytest.skip("no extent parameter")
    h = 1e-5
    psf = GaussianPsf(1.2)
    an = drho1_hg(geo, psf, 40, which).entries
    up = rho1_hg(geo.with_params(**{which: getattr(geo, which) + h}), psf, 40, check=False).entries
    dn = rho1_hg(geo.with_params(**{which: getattr(geo, which) - h}), psf, 40, check=False).entries
    assert np.linalg.norm(an - (up - dn) / (2 * h)) <= 1e-6


@pytest.mark.parametrize("geo", [SceneGeometry.points(2, 0.0, 2.0), SceneGeometry.points(5, 0.0, 3.0),
                                 SceneGeometry.line(0.0, 3.0)])
def test_drho_parity_selection_rule(geo):
    d = drho1_hg(geo, None, 30, "theta1").entries
    q = np.arange(31)
    same = (q[:, None] + q[None, :]) % 2 == 0
    assert np.all(d[same] == 0.0)
    assert np.any(d[~same] != 0.0)


def test_drho_single_point_rank_two():
    # -|psi'><psi| - |psi><psi'| with psi = |0>, psi' = -|1>/2 at x = 0
    d = drho1_hg(SceneGeometry.points(1), None, 10, "theta1").entries
    expect = np.zeros((11, 11))
    expect[0, 1] = expect[1, 0] = 0.5
    np.testing.assert_allclose(d, expect, atol=1e-15)
    assert np.linalg.matrix_rank(d) == 2


# SLD and QFI -------------------------------------------------------------------------


def test_sld_single_point():
    geo = SceneGeometry.points(1, 0.3)
    rho = rho1_hg(geo, None, 20)
    sld = sld_from_rho(rho, drho1_hg(geo, None, 20, "theta1"))
    assert np.max(np.abs(sld.entries - sld.entries.T)) <= 1e-12
    assert np.trace(rho.entries @ sld.entries @ sld.entries) == pytest.approx(1.0, abs=1e-10)


def test_sld_two_point_matches_closed_form():
    geo = SceneGeometry.points(2, 0.0, 3.0)
    rho = rho1_hg(geo, None, 60)
    sld = sld_from_rho(rho, drho1_hg(geo, None, 60, "theta1"))
    val = np.trace(rho.entries @ sld.entries @ sld.entries)
    assert val == pytest.approx(_gaussian_k11(3.0), rel=1e-8)


def test_sld_residual_failure_is_reported():
    # an antisymmetric part in the derivative cannot be matched by a symmetric SLD
    rho = HgOperator(np.diag([0.5, 0.5]))
    bad = HgOperator(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(NumericalError, match="residual"):
        sld_from_rho(rho, bad)


def test_negative_eigenvalue_rejected():
    with pytest.raises(NumericalError, match="eigenvalue"):
        sld_from_rho(HgOperator(np.diag([1.0, -1e-6])), HgOperator(np.zeros((2, 2))))


@pytest.mark.parametrize("t2", [0.5, 1.0, 2.0, 4.0])
def test_numeric_two_point_qfi(t2):
    q = qfi_matrix(SceneGeometry.points(2, 0.0, t2))
    assert q.k11 == pytest.approx(_gaussian_k11(t2), rel=1e-7)
    assert q.k22 == pytest.approx(0.25, rel=1e-7)


@pytest.mark.parametrize("t2", [0.1, 1.5, 3.0, 5.0, 8.0])
def test_numeric_matches_analytic_for_one_and_two_points(t2):
    assert qfi_matrix(SceneGeometry.points(2, 0.0, t2)).k11 == pytest.approx(_gaussian_k11(t2), rel=1e-7)
    assert qfi_matrix(SceneGeometry.points(1, t2 - 4.0)).k11 == pytest.approx(1.0, rel=1e-7)


def test_many_points_small_extent_limit():
    assert qfi_matrix(SceneGeometry.points(6, 0.0, 1e-4)).k11 == pytest.approx(1.0, abs=1e-4)


def test_line_asymptote():
    q = qfi_matrix(SceneGeometry.line(0.0, 40.0))
    assert 40.0 * q.k11 == pytest.approx(1.95, abs=0.02)


def test_shift_invariance_of_qfi():
    a = qfi_matrix(SceneGeometry.points(4, 0.0, 3.0))
    b = qfi_matrix(SceneGeometry.points(4, 3.0, 3.0))
    assert b.k11 == pytest.approx(a.k11, rel=1e-7)
    assert abs(b.k12) <= 1e-8 * max(b.k11, b.k22)


def test_sigma_scaling_of_qfi():
    a = qfi_matrix(SceneGeometry.points(3, 0.0, 2.0))
    b = qfi_matrix(SceneGeometry.points(3, 0.0, 6.0), GaussianPsf(3.0), PhotonBudget(10))
    assert b.k11 == pytest.approx(a.k11 / 9, rel=1e-10)
    assert b.total11 == pytest.approx(10 * a.k11 / 9, rel=1e-10)


@pytest.mark.parametrize("t2", [0.3, 1.7, 5.0])
def test_separation_qfi_equals_aligned_spade_two_points(t2):
    g = SceneGeometry.points(2, 0.0, t2)
    assert hg_spade_fisher(g).j22 == pytest.approx(qfi_matrix(g).k22, rel=1e-5)


@pytest.mark.parametrize("t2", [0.1, 0.5, 1.0])
def test_separation_qfi_equals_aligned_spade_short_line(t2):
    g = SceneGeometry.line(0.0, t2)
    assert hg_spade_fisher(g).j22 == pytest.approx(qfi_matrix(g).k22, rel=1e-4)


def test_line_separation_gap_opens_beyond_rayleigh():
    # rho of a line is not diagonal in the HG basis, so attainment is only asymptotic
    g = SceneGeometry.line(0.0, 3.0)
    j, k = hg_spade_fisher(g).j22, qfi_matrix(g).k22
    assert j <= k + 1e-8
    assert 1e-4 < 1 - j / k < 1e-2


@given(st.sampled_from([2, 3, 4, 7]), st.floats(-3, 3), st.floats(0.1, 8))
def test_qfi_psd_and_below_single_point_ceiling(n, t1, t2):
    q = qfi_matrix(SceneGeometry.points(n, t1, t2))
    assert np.all(np.linalg.eigvalsh(q.matrix()) >= -1e-12)
    assert q.k11 <= 1.0 + 1e-9


# SLD eigenbasis measurement ------------------------------------------------------------


@pytest.fixture(scope="module")
def meas():
    return sld_measurement(SceneGeometry.points(2, 0.0, 2.0))


def test_measurement_basis_orthonormal_and_ordered(meas):
    v = meas.basis
    np.testing.assert_allclose(v.T @ v, np.eye(meas.dim), atol=1e-12)
    assert np.all(np.diff(meas.eigenvalues) <= 0)
    for j in range(meas.dim):
        nz = np.flatnonzero(np.abs(v[:, j]) > 1e-12)
        assert v[nz[0], j] > 0


def test_measurement_attains_qfi_at_reference(meas):
    geo = SceneGeometry.points(2, 0.0, 2.0)
    assert meas.fisher(geo)[0, 0] == pytest.approx(qfi_matrix(geo).k11, rel=1e-6)


def test_measurement_loss_is_second_order(meas):
    k = _gaussian_k11(2.0)
    fi = meas.fisher(SceneGeometry.points(2, 0.1, 2.0))[0, 0]
    assert fi < k
    e = np.array([0.01, 0.02, 0.05, 0.1, 0.2])
    loss = [(k - meas.fisher(SceneGeometry.points(2, x, 2.0))[0, 0]) / k for x in e]
    slope = np.polyfit(np.log(e), np.log(loss), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.1)


def test_measurement_fisher_is_stationary_in_reference():
    true = SceneGeometry.points(2, 0.3, 2.0)
    h = 1e-3

    def fi(ref1):
        return sld_measurement(true.with_params(theta1=ref1)).fisher(true)[0, 0]

    assert abs((fi(0.3 + h) - fi(0.3 - h)) / (2 * h)) < 1e-4


def test_measurement_probabilities_complete(meas):
    for t1 in (-0.5, 0.0, 0.8):
        d = meas.outcome_distribution(SceneGeometry.points(2, t1, 2.0))
        assert d.tail_mass < 1e-10
        assert d.probs.sum() == pytest.approx(1.0 - d.tail_mass, abs=1e-12)


def test_measurement_json_round_trip(meas):
    back = SldMeasurement.from_json(meas.to_json())
    np.testing.assert_array_equal(back.basis, meas.basis)
    np.testing.assert_array_equal(back.eigenvalues, meas.eigenvalues)
    assert back.reference_theta == meas.reference_theta
    d = meas.to_dict()
    assert set(d) >= {"reference_theta", "dim", "eigenvalues", "basis_vectors"}
    np.testing.assert_array_equal(np.array(d["basis_vectors"])[0], meas.basis[:, 0])


def test_line_measurement_attains_qfi():
    geo = SceneGeometry.line(0.5, 3.0)
    m = sld_measurement(geo)
    assert m.fisher(geo)[0, 0] == pytest.approx(qfi_matrix(geo).k11, rel=1e-6)
