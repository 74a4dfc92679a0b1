import math

import numpy as np
import pytest
from scipy import integrate

from qanomaly.ensemble import derive_seed, picket_fence, sample_banded_matrix
from qanomaly.errors import DivergenceError, SingularityError, ValidationError
from qanomaly.schemas import BandProfile, DrivingSpec, SpectralSamples
from qanomaly.spectral import (
    analytic_C,
    combine_spectral_samples,
    driving_spectrum,
    estimate_C,
    fit_spectral_slope,
    kubo_diffusion,
)


def test_dc_spectrum_is_singular_at_zero():
    with pytest.raises(SingularityError):
        driving_spectrum(DrivingSpec(epsilon=1.0, sigma=2.0, t_phi=10.0), 0.0)


def test_quench_spectrum_integrates_to_eps_squared():
    spec = DrivingSpec(epsilon=1.5, sigma=0.0, t_phi=1.0)
    total, _ = integrate.quad(lambda w: driving_spectrum(spec, w), -np.inf, np.inf)
    assert total == pytest.approx(1.5 ** 2, rel=1e-8)


def test_spectrum_needs_finite_correlation_time():
    with pytest.raises(ValidationError):
        driving_spectrum(DrivingSpec(epsilon=1.0, sigma=0.0), 1.0)


def test_analytic_C_window_is_inclusive():
    omega = np.array([0.5, 1.0, 10.0, 50.0, 51.0, -10.0])
    values = analytic_C(1.0, omega, 1.0, 50.0)
    assert values.tolist() == pytest.approx([0.0, 2 * math.pi, 2 * math.pi, 2 * math.pi, 0.0, 2 * math.pi])
    assert analytic_C(1.5, 4.0, 1.0, 50.0) == pytest.approx(2 * math.pi * 2.0)


@pytest.mark.parametrize("eps", [1.0, 5.0, 12.0])
def test_kubo_ohmic_dc_value(eps):
    spec = DrivingSpec.from_gamma(eps, 2.0, 0.01)
    D = kubo_diffusion(1.0, spec, omega0=1.0, omega_cl=50.0)
    assert D == pytest.approx(math.pi * eps ** 2, rel=0.01)


def test_kubo_ohmic_value_is_insensitive_to_cutoffs():
    base = kubo_diffusion(1.0, DrivingSpec.from_gamma(1.0, 2.0, 0.01), 1.0, 50.0)
    assert kubo_diffusion(1.0, DrivingSpec.from_gamma(1.0, 2.0, 0.02), 1.0, 50.0) == pytest.approx(base, rel=0.02)
    assert kubo_diffusion(1.0, DrivingSpec.from_gamma(1.0, 2.0, 0.01), 2.0, 50.0) == pytest.approx(base, rel=0.02)
    assert kubo_diffusion(1.0, DrivingSpec.from_gamma(1.0, 2.0, 0.01), 1.0, 100.0) == pytest.approx(base, rel=0.02)


def test_kubo_with_infrared_cutoff_matches_closed_form():
    gamma, eps = 0.01, 2.0
    D = kubo_diffusion(1.0, DrivingSpec.from_gamma(eps, 2.0, gamma), 1.0, 50.0, infrared_cutoff=True)
    expected = 2 * eps ** 2 * (math.atan(50.0 / gamma) - math.atan(1.0 / gamma))
    assert D == pytest.approx(expected, rel=1e-8)


def test_kubo_sub_ohmic_quadrature_matches_closed_form_integral():
    # s0 = 0.5, sigma = 2: w^-0.5 / (w^2 + gamma^2) on (0, 50), with w = u^2
    gamma, eps = 0.05, 1.0
    D = kubo_diffusion(0.5, DrivingSpec.from_gamma(eps, 2.0, gamma), 1.0, 50.0)
    direct, _ = integrate.quad(lambda u: 2 / (u ** 4 + gamma ** 2), 0, math.sqrt(50.0), limit=200)
    assert D == pytest.approx(2 * eps ** 2 * gamma * direct, rel=1e-7)


def test_kubo_zero_driving_gives_zero():
    assert kubo_diffusion(1.0, DrivingSpec(epsilon=0.0, t_phi=10.0), 1.0, 50.0) == 0.0


def test_kubo_divergences_are_reported():
    with pytest.raises(DivergenceError):
        kubo_diffusion(0.5, DrivingSpec.from_gamma(1.0, 3.0, 0.1), 1.0, 50.0)
    with pytest.raises(DivergenceError):
        kubo_diffusion(1.5, DrivingSpec.from_gamma(1.0, 0.0, 0.1), 1.0, math.inf)


def test_estimate_C_recovers_flat_profile():
    profile = BandProfile(s_lambda=1.0, lam=1.0, band_max=10)
    energies = picket_fence(200)
    estimates = [
        estimate_C(sample_banded_matrix(profile, 200, derive_seed(17, r)).to_dense(), energies)
        for r in range(20)
    ]
    pooled = combine_spectral_samples(estimates)
    omega = np.asarray(pooled.omega_bins)
    values = np.asarray(pooled.values)

    inside = (omega >= 1) & (omega <= 10)
    assert np.allclose(values[inside], analytic_C(1.0, omega[inside], 1.0, 10.0), rtol=0.1)
    assert np.all(values[omega > 10] == 0)
    assert pooled.n_reference == 20 * estimates[0].n_reference


def test_estimate_C_single_coupling():
    v = 0.3
    V = np.zeros((4, 4))
    V[1, 2] = V[2, 1] = v
    samples = estimate_C(V, np.arange(4.0), reference_levels=[1, 2])

    assert samples.omega_bins == [1.0, 2.0]
    assert samples.values == pytest.approx([math.pi * v ** 2, 0.0])
    assert samples.weights == pytest.approx([4 * math.pi * v ** 2, 0.0])
    assert samples.counts == [4, 2]
    assert samples.n_reference == 2


def test_estimate_C_of_zero_matrix_vanishes():
    samples = estimate_C(np.zeros((16, 16)), picket_fence(16), reference_levels=range(4, 12))
    assert len(samples.values) == 11
    assert all(value == 0.0 for value in samples.values)
    assert sum(samples.counts) == 8 * 15


def test_estimate_C_rejects_mismatched_shapes():
    with pytest.raises(ValidationError):
        estimate_C(np.zeros((4, 4)), np.arange(5.0))


def test_fit_spectral_slope_on_power_law():
    omega = np.arange(1, 41, dtype=float)
    samples = SpectralSamples(
        omega_bins=omega.tolist(),
        values=(2 * math.pi * omega ** 0.5).tolist(),
        counts=[10] * 40,
        weights=[1.0] * 40,
        n_reference=10,
        bin_width=1.0,
    )
    slope, stderr = fit_spectral_slope(samples, (2, 30))
    assert slope == pytest.approx(0.5, abs=1e-10)
    assert stderr < 1e-8
