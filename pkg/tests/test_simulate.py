import math
import warnings

import numpy as np
import pytest
from scipy import special, stats

from centroidqfi.errors import ConfigError
from centroidqfi.qfi import sld_measurement
from centroidqfi.scene import GaussianPsf, SceneGeometry
from centroidqfi.simulate import (
    RNG_ALGORITHM,
    TAIL_OUTCOME,
    MeasurementBatch,
    counts_from_bytes,
    make_rng,
    sample_direct,
    sample_direct_parallel,
    sample_modes,
    sample_sld,
    task_seed,
)
from centroidqfi.spade import ModalDistribution, hg_mode_probs


def _two_point_cdf(x, t2):
    return 0.5 * (stats.norm.cdf(x - t2 / 2) + stats.norm.cdf(x + t2 / 2))


def test_single_point_mean_and_spread():
    b = sample_direct(SceneGeometry.points(1, 0.0), None, 10**6, 1)
    x = b.positions()
    assert abs(x.mean()) < 4e-3
    assert x.std() == pytest.approx(1.0, abs=3e-3)
    assert b.rng_algorithm == RNG_ALGORITHM == "PCG64"


def test_two_point_distribution_ks():
    b = sample_direct(SceneGeometry.points(2, 0.0, 6.0), None, 10**6, 2)
    d = stats.kstest(b.positions(), lambda x: _two_point_cdf(x, 6.0)).statistic
    assert d < 0.002


def test_line_distribution_ks():
    # a uniform line convolved with the PSF, written with erf/Gaussian closed forms
    t2 = 4.0

    def cdf(x):
        def prim(u):  # integral of Phi(u)
            return u * stats.norm.cdf(u) + stats.norm.pdf(u)

        return (prim(x + t2 / 2) - prim(x - t2 / 2)) / t2

    b = sample_direct(SceneGeometry.line(0.0, t2), None, 200000, 3)
    assert stats.kstest(b.positions(), cdf).pvalue > 1e-4


def test_direct_units_with_sigma():
    psf = GaussianPsf(2.5)
    b = sample_direct(SceneGeometry.points(1, 5.0), psf, 200000, 4)
    assert b.positions().mean() == pytest.approx(5.0, abs=0.03)
    assert b.outcomes.mean() == pytest.approx(2.0, abs=0.012)
    assert b.positions().std() == pytest.approx(2.5, abs=0.02)


def test_seed_replay_is_exact():
    g = SceneGeometry.points(3, 0.2, 2.0)
    a = sample_direct(g, None, 1000, 77)
    b = sample_direct(g, None, 1000, 77)
    np.testing.assert_array_equal(a.outcomes, b.outcomes)
    assert not np.array_equal(a.outcomes, sample_direct(g, None, 1000, 78).outcomes)


def test_degenerate_distribution():
    d = ModalDistribution(np.array([1.0, 0.0, 0.0]), 0.0, np.zeros(3), np.zeros(3))
    b = sample_modes(d, 5000, 0)
    assert np.all(b.outcomes == 0)
    np.testing.assert_array_equal(b.counts(), [5000, 0, 0])


def test_modal_law_ground_mode_frequency():
    # one point at 2 sigma: mode numbers follow Poisson(1)
    g = SceneGeometry.points(1, 2.0)
    b = sample_modes(hg_mode_probs(g, None, 50), 10**6, 12, g)
    assert np.mean(b.outcomes == 0) == pytest.approx(math.exp(-1), abs=3e-3)
    assert np.mean(b.outcomes == 1) == pytest.approx(math.exp(-1), abs=3e-3)


def test_poisson_photon_number():
    g = SceneGeometry.points(1, 0.0)
    n = np.array([sample_direct(g, None, 1, s, "poisson").n_photons_drawn for s in range(40000)])
    se = math.sqrt(math.exp(-1) * (1 - math.exp(-1)) / len(n))
    assert np.mean(n == 0) == pytest.approx(math.exp(-1), abs=5 * se)
    assert n.mean() == pytest.approx(1.0, abs=5 / math.sqrt(len(n)))


def test_exact_count_mode():
    assert sample_direct(SceneGeometry.points(2, 0.0, 1.0), None, 123, 0).n_photons_drawn == 123


def test_bad_count_mode():
    with pytest.raises(ConfigError):
        sample_direct(SceneGeometry.points(1), None, 10, 0, "binomial")


def test_mode_counts_chi_square():
    d = hg_mode_probs(SceneGeometry.points(2, 0.5, 2.0), None, 50)
    b = sample_modes(d, 200000, 5)
    c = b.counts()
    keep = d.probs * 200000 > 20
    obs = np.append(c[keep], c[~keep].sum())
    exp = np.append(d.probs[keep], d.probs[~keep].sum() + d.tail_mass) * 200000
    assert stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue > 1e-4


def test_draws_are_uncorrelated():
    x = sample_direct(SceneGeometry.points(2, 0.0, 3.0), None, 200000, 6).outcomes
    x = x - x.mean()
    r = np.dot(x[:-1], x[1:]) / np.dot(x, x)
    assert abs(r) < 4.5 / math.sqrt(len(x))


def test_sld_sampler_at_reference():
    g = SceneGeometry.points(2, 0.0, 2.0)
    m = sld_measurement(g)
    b = sample_sld(m, g, 100000, 7)
    p = m.outcome_probs(g)
    assert b.kind == "SldBasis" and b.n_outcomes == m.dim
    np.testing.assert_allclose(b.counts() / 1e5, p, atol=5 * math.sqrt(0.25 / 1e5))


def test_tail_outcome_warns_and_is_excluded():
    d = ModalDistribution(np.array([0.5, 0.4]), 0.1, np.zeros(2), np.zeros(2), tail_tol=1.0)
    with pytest.warns(UserWarning, match="residual"):
        b = sample_modes(d, 2000, 8)
    assert b.tail_count > 0
    assert b.counts().sum() + b.tail_count == 2000
    assert np.all(b.outcomes[b.outcomes < 0] == TAIL_OUTCOME)


def test_csv_round_trip_direct():
    b = sample_direct(SceneGeometry.line(0.3, 2.0), GaussianPsf(1.5), 500, 9)
    back = MeasurementBatch.from_csv(b.to_csv())
    np.testing.assert_array_equal(back.outcomes, b.outcomes)
    assert back.header() == b.header()
    assert b.to_csv().startswith("# kind=DirectImaging\n# seed=9\n")


def test_csv_round_trip_modal():
    d = hg_mode_probs(SceneGeometry.points(3, 1.0, 2.0), None, 40)
    b = sample_modes(d, 1000, 10, SceneGeometry.points(3, 1.0, 2.0))
    back = MeasurementBatch.from_csv(b.to_csv())
    np.testing.assert_array_equal(back.outcomes, b.outcomes)
    np.testing.assert_array_equal(back.counts(), b.counts())


def test_csv_without_header_column_rejected():
    with pytest.raises(ConfigError, match="outcome"):
        MeasurementBatch.from_csv("# kind=HgSpade\n1\n2\n")


def test_count_bytes_round_trip():
    d = hg_mode_probs(SceneGeometry.points(2, 1.0, 2.0), None, 30)
    b = sample_modes(d, 3000, 11)
    raw = b.count_vector_bytes()
    assert len(raw) == 8 * (b.n_outcomes + 1)
    c, tail = counts_from_bytes(raw)
    np.testing.assert_array_equal(c, b.counts())
    assert tail == b.tail_count


def test_task_seeds_independent_and_stable():
    s = [task_seed(123, i) for i in range(100)]
    assert len(set(s)) == 100
    assert task_seed(123, 5) == s[5]
    assert task_seed(124, 5) != s[5]


def test_parallel_batches_match_serial():
    g = SceneGeometry.points(2, 0.0, 1.0)
    ser = sample_direct_parallel(g, None, 200, 42, 4)
    par = sample_direct_parallel(g, None, 200, 42, 4, workers=2)
    for a, b in zip(ser, par):
        np.testing.assert_array_equal(a.outcomes, b.outcomes)
    assert not np.array_equal(ser[0].outcomes, ser[1].outcomes)


def test_make_rng_is_pcg64():
    assert isinstance(make_rng(0).bit_generator, np.random.PCG64)
