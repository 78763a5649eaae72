import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from qafilter.wiener import (
    SpectralModel,
    adapt_filter,
    check_optimality,
    equal_partition,
    expected_mse,
    golden_section_min,
    influence_factor_spectrum,
    minimize_per_bin,
    oracle_report_rows,
    random_spectral_model,
    refinement_deviations,
    smooth_spectral_model,
    subband_consistency,
)


def test_spectral_model_validation():
    with pytest.raises(ValueError, match="nonnegative"):
        SpectralModel(np.array([-1.0]), np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError, match="shape"):
        SpectralModel(np.ones(3), np.ones(2), np.ones(3))
    with pytest.raises(ValueError, match="finite"):
        SpectralModel(np.array([np.inf]), np.array([0.0]), np.array([1.0]))


def test_zero_noise_identity():
    rng = np.random.default_rng(0)
    w = rng.uniform(0.3, 1.2, size=16)
    m = SpectralModel(rng.uniform(0.5, 2, size=16), np.zeros(16), w)
    np.testing.assert_array_equal(adapt_filter(m), w)


def test_half_factor_example():
    # |W| = 1 and N/S = 1 halve the response
    m = SpectralModel(np.ones(4), np.ones(4), np.ones(4))
    np.testing.assert_allclose(adapt_filter(m), 0.5 * np.ones(4), rtol=1e-15)


def test_pure_noise_bins_are_suppressed():
    m = SpectralModel(np.array([1.0, 0.0, 0.0]), np.array([1.0, 2.0, 0.0]),
                      np.array([1.0, 1.0, 1.0]))
    f = influence_factor_spectrum(m)
    assert f[1] == 0.0           # noise only: fully suppressed
    assert f[2] == 1.0           # nothing there: leave the response alone
    assert 0 < f[0] < 1


def test_expected_mse_trivia():
    rng = np.random.default_rng(1)
    s = rng.uniform(0.5, 2.0, size=8)
    w = rng.uniform(0.4, 1.1, size=8)
    clean = SpectralModel(s, np.zeros(8), w)
    assert expected_mse(clean, w) == 0.0
    noisy = SpectralModel(s, rng.uniform(0.1, 1.0, size=8), w)
    assert abs(expected_mse(noisy, np.zeros(8)) - s.sum()) < 1e-12


def test_expected_mse_rejects_zero_response_with_signal():
    m = SpectralModel(np.array([1.0]), np.array([0.2]), np.array([0.0]))
    with pytest.raises(ValueError, match="undefined"):
        expected_mse(m, np.array([0.5]))


def test_golden_section_on_quadratic():
    x = golden_section_min(lambda t: (t - 0.37) ** 2, -1, 2, tol=1e-13)
    assert abs(x - 0.37) < 1e-10


def test_adapted_filter_matches_independent_numerical_minimum():
    # cross-check with scipy as well as the in-package golden section
    for seed in range(5):
        m = random_spectral_model(32, seed)
        adapted = adapt_filter(m)
        numeric = minimize_per_bin(m)
        assert np.max(np.abs(numeric - adapted)) < 1e-8
        for i in (0, 7, 31):
            s, n, wsq = m.signal_power[i], m.noise_power[i], m.response[i] ** 2
            res = minimize_scalar(lambda t: s * (1 - t) ** 2 + n * wsq * t * t,
                                  bounds=(-0.5, 1.5), method="bounded",
                                  options={"xatol": 1e-12})
            assert abs(res.x * m.response[i] - adapted[i]) < 1e-7


def test_perturbations_never_beat_the_optimum():
    for seed in range(5):
        m = random_spectral_model(64, seed)
        chk = check_optimality(m, n_perturbations=100, seed=seed + 1)
        assert chk.perturbation_violations == 0
        assert chk.max_minimizer_gap < 1e-8
        assert chk.ok


def test_monotone_attenuation_in_noise():
    s = np.ones(1)
    w = np.array([0.9])
    prev = np.inf
    for n in (0.0, 0.1, 0.5, 1.0, 4.0):
        cur = abs(adapt_filter(SpectralModel(s, np.array([n]), w))[0])
        assert cur <= prev
        prev = cur


def test_factor_range_matches_modulation_bound():
    for seed in range(10):
        m = random_spectral_model(48, seed)
        f = influence_factor_spectrum(m)
        assert np.all(f > 0) and np.all(f <= 1.0)


def test_complex_response_supported():
    rng = np.random.default_rng(5)
    w = rng.uniform(0.4, 1.0, 16) * np.exp(1j * rng.uniform(0, 2 * np.pi, 16))
    m = SpectralModel(rng.uniform(0.5, 2, 16), rng.uniform(0.05, 0.8, 16), w)
    adapted = adapt_filter(m)
    assert expected_mse(m, adapted) <= expected_mse(m, w)
    numeric = minimize_per_bin(m)
    assert np.max(np.abs(numeric - adapted)) < 1e-8


def test_subband_single_bin_bands_are_exact():
    m = random_spectral_model(16, seed=3)
    rep = subband_consistency(m, equal_partition(16, 16))
    assert rep.max_rel_deviation < 1e-12


def test_subband_constant_spectra_are_exact():
    m = SpectralModel(np.full(12, 1.4), np.full(12, 0.3), np.full(12, 0.8))
    rep = subband_consistency(m, equal_partition(12, 3))
    assert rep.max_rel_deviation < 1e-12


def test_subband_partition_validation():
    m = random_spectral_model(8, seed=1)
    with pytest.raises(ValueError, match="empty"):
        subband_consistency(m, [np.arange(8), np.array([], dtype=int)])
    with pytest.raises(ValueError, match="overlap"):
        subband_consistency(m, [np.arange(5), np.arange(4, 8)])
    with pytest.raises(ValueError, match="cover"):
        subband_consistency(m, [np.arange(4)])


def test_refinement_improves_smooth_spectra():
    for seed in range(5):
        m = smooth_spectral_model(64, seed)
        devs = refinement_deviations(m, (2, 4, 8, 16, 32, 64))
        assert all(a > b for a, b in zip(devs, devs[1:])), devs
        assert devs[-1] < 1e-12  # one bin per band is exact


def test_oracle_rows_shape_and_content():
    m = random_spectral_model(6, seed=9)
    rows = oracle_report_rows(m)
    assert len(rows) == 6
    i, s, n, w, wp, f = rows[2]
    assert i == 2
    assert wp == pytest.approx(w * f)
