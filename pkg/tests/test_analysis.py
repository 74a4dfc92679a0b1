import math

import numpy as np
import pytest

from qanomaly.analysis import (
    SPECIAL_CASE_FACTORS,
    central_limit_diffusion,
    collapse_metric,
    core_width,
    fgr_rate,
    fit_decay_rate,
    fit_diffusion,
    fit_power_law,
    rescale_collapse,
    saturation_level,
    theory_diffusion,
    theory_spreading,
    universal_diffusion,
    wigner_time,
)
from qanomaly.errors import DomainError, NonDiffusiveError, ValidationError, WindowError
from qanomaly.schemas import SystemScales

SCALES = SystemScales.from_band(50)


@pytest.mark.parametrize("s", [-1.5, -1.0, 0.0, 0.5, 1.5])
def test_wigner_time_unit_base(s):
    assert wigner_time(1.0, s) == pytest.approx(1.0)


def test_wigner_time_examples():
    assert wigner_time(0.5, 1.0) == pytest.approx(4.0)
    assert wigner_time(8.0, -1.0) == pytest.approx(0.25)


def test_wigner_time_domain():
    with pytest.raises(DomainError):
        wigner_time(1.0, 2.0)
    with pytest.raises(DomainError):
        wigner_time(0.0, -1.0)


def test_universal_diffusion_examples():
    assert universal_diffusion(1.0, -0.7) == pytest.approx(1.0)
    assert universal_diffusion(2.0, 0.0) == pytest.approx(8.0)
    assert universal_diffusion(3.0, -1.0) == pytest.approx(9.0, rel=1e-12)
    # hbar drops out only in the Ohmic case
    assert universal_diffusion(3.0, -1.0, hbar=2.5) == pytest.approx(9.0, rel=1e-12)
    assert universal_diffusion(3.0, -0.5, hbar=2.5) != pytest.approx(universal_diffusion(3.0, -0.5))


def test_universal_diffusion_closed_forms_agree(rng):
    for _ in range(200):
        s = rng.uniform(-1.9, 1.9)
        eps = rng.uniform(0.05, 20.0)
        hbar = rng.uniform(0.2, 3.0)
        closed = hbar ** (-2 * (s + 1) / (2 - s)) * eps ** (6 / (2 - s))
        assert universal_diffusion(eps, s, hbar) == pytest.approx(closed, rel=1e-12)
        assert universal_diffusion(eps, s, hbar) == pytest.approx(hbar ** 2 / wigner_time(eps, s, hbar) ** 3, rel=1e-12)


def test_fgr_rate():
    assert fgr_rate(0.0) == 0.0
    assert fgr_rate(1.0) == pytest.approx(2 * math.pi)
    assert fgr_rate(0.3, hbar=2.0) == pytest.approx(math.pi * 0.09)


@pytest.mark.parametrize("eps", [0.2, 1.0, 7.0])
def test_special_case_factors(eps):
    assert wigner_time(eps, 1.0) / (1.0 / fgr_rate(eps)) == pytest.approx(SPECIAL_CASE_FACTORS["ohmic_quench"])
    kubo_time = (1.0 / (math.pi * eps ** 2)) ** (1.0 / 3.0)
    assert wigner_time(eps, -1.0) / kubo_time == pytest.approx(SPECIAL_CASE_FACTORS["ohmic_dc"])


def test_theory_spreading_regimes():
    assert theory_spreading(-1.0, 1.0, 0.25, SCALES) == pytest.approx(0.5)
    assert theory_spreading(-1.0, 1.0, 100.0, SCALES) == pytest.approx(1.0)
    assert theory_spreading(1.0, 0.1, 1.0, SCALES) == pytest.approx(0.1 * math.sqrt(50.0))
    with pytest.raises(DomainError):
        theory_spreading(0.0, 1.0, 1.0, SCALES)


def test_theory_spreading_is_ballistic_below_t_cl():
    t_cl = SCALES.t_cl
    at_t_cl = theory_spreading(1.0, 0.1, t_cl, SCALES)
    assert theory_spreading(1.0, 0.1, t_cl / 4, SCALES) == pytest.approx(at_t_cl / 4)


def test_ohmic_weak_driving_is_t_phi_independent():
    eps = 0.5
    t_eps = wigner_time(eps, -1.0)
    values = [theory_diffusion(-1.0, eps, t_phi, SCALES, "weak") for t_phi in (0.2, 0.5, 0.9 * t_eps)]
    assert values == pytest.approx([eps ** 2] * 3)


def test_central_limit_reproduces_weak_driving_formula(rng):
    for _ in range(100):
        s = rng.uniform(-1.8, -0.1)
        eps = rng.uniform(0.05, 0.3)
        t_eps = wigner_time(eps, s)
        t_phi = math.sqrt(SCALES.t_cl * t_eps)
        via_spread = central_limit_diffusion(theory_spreading(s, eps, t_phi, SCALES), t_phi)
        assert via_spread == pytest.approx(0.5 * theory_diffusion(s, eps, t_phi, SCALES, "weak"), rel=1e-12)


def test_central_limit_reproduces_strong_and_super_ohmic_formulas(rng):
    for _ in range(100):
        s = rng.uniform(-1.8, -0.1)
        eps = rng.uniform(0.5, 5.0)
        t_phi = wigner_time(eps, s) * rng.uniform(1.0, 10.0)
        via_spread = central_limit_diffusion(theory_spreading(s, eps, t_phi, SCALES), t_phi)
        assert via_spread == pytest.approx(0.5 * theory_diffusion(s, eps, t_phi, SCALES, "strong"), rel=1e-12)

        s_pos = rng.uniform(0.1, 1.8)
        t_phi = rng.uniform(1.0, 5.0)
        via_spread = central_limit_diffusion(theory_spreading(s_pos, eps, t_phi, SCALES), t_phi)
        assert via_spread == pytest.approx(0.5 * theory_diffusion(s_pos, eps, t_phi, SCALES), rel=1e-12)


def test_strong_driving_at_wigner_time_is_universal(rng):
    for _ in range(50):
        s = rng.uniform(-1.8, -0.1)
        eps = rng.uniform(0.1, 10.0)
        t_eps = wigner_time(eps, s)
        assert theory_diffusion(s, eps, t_eps, SCALES, "strong") == pytest.approx(
            theory_diffusion(s, eps, 0.0, SCALES, "intrinsic"), rel=1e-12
        )


def test_inconsistent_regime_is_rejected():
    t_eps = wigner_time(0.5, -1.0)
    with pytest.raises(ValidationError):
        theory_diffusion(-1.0, 0.5, 0.5 * t_eps, SCALES, "strong")
    with pytest.raises(ValidationError):
        theory_diffusion(-1.0, 0.5, 2.0 * t_eps, SCALES, "weak")
    with pytest.raises(DomainError):
        theory_diffusion(0.0, 0.5, 1.0, SCALES)


def test_auto_regime_picks_by_wigner_time():
    t_eps = wigner_time(0.5, -0.5)
    assert theory_diffusion(-0.5, 0.5, 0.5 * t_eps, SCALES) == theory_diffusion(-0.5, 0.5, 0.5 * t_eps, SCALES, "weak")
    assert theory_diffusion(-0.5, 0.5, 2.0 * t_eps, SCALES) == theory_diffusion(-0.5, 0.5, 2.0 * t_eps, SCALES, "strong")


def test_core_width():
    assert core_width(-1.0, 1.0, 1.0) == pytest.approx(0.5)
    t_large = 1e6
    assert core_width(-1.0, 1.0, t_large) * t_large == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(DomainError):
        core_width(0.5, 1.0, 1.0)


def test_core_width_terms_balance_at_wigner_time(rng):
    for _ in range(50):
        s = rng.uniform(-1.9, -0.1)
        eps = rng.uniform(0.1, 10.0)
        t = wigner_time(eps, s)
        assert t ** abs(s) == pytest.approx((eps * t) ** -2.0, rel=1e-10)
        assert core_width(s, eps, t) == pytest.approx((2 * t ** abs(s)) ** (-1 / abs(s)), rel=1e-10)


def test_fit_exact_linear_curve(make_curve):
    t = np.linspace(1.0, 10.0, 20)
    estimate = fit_diffusion(make_curve(t, 2 * 3.7 * t, eps=2.0), (1.0, 10.0))
    assert estimate.D == pytest.approx(3.7, rel=1e-10)
    assert estimate.stderr < 1e-8
    assert estimate.quality == "ok"
    s = -1.0
    assert estimate.X == pytest.approx(2.0 ** (2 / (2 - s)))
    assert estimate.Y == pytest.approx(3.7 / 2.0 ** (6 / (2 - s)))
    assert estimate.t_eps == pytest.approx(wigner_time(2.0, s))


def test_fit_constant_curve_gives_zero(make_curve):
    t = np.linspace(1.0, 10.0, 20)
    estimate = fit_diffusion(make_curve(t, np.full_like(t, 2.0)), (1.0, 10.0))
    assert estimate.D == pytest.approx(0.0, abs=1e-10)


def test_fit_flags_sub_diffusive_curve(make_curve):
    t = np.geomspace(0.1, 10.0, 30)
    estimate = fit_diffusion(make_curve(t, np.sqrt(t)), (0.1, 10.0))
    assert "curvature" in estimate.flags
    assert estimate.quality == "non_diffusive"

    weighted = fit_diffusion(make_curve(t, np.sqrt(t), stderr=np.full_like(t, 1e-3)), (0.1, 10.0))
    assert "chi2" in weighted.flags
    assert weighted.reduced_chi2 > 10


def test_fit_weighted_noisy_curve_is_not_flagged(make_curve, rng):
    t = np.linspace(1.0, 10.0, 25)
    err = np.full_like(t, 0.05)
    y = 2 * 1.5 * t + 0.3 + rng.normal(0.0, 0.05, t.size)
    estimate = fit_diffusion(make_curve(t, y, stderr=err), (1.0, 10.0))
    assert estimate.D == pytest.approx(1.5, abs=5 * estimate.stderr)
    assert estimate.reduced_chi2 < 3


def test_fit_rejects_significantly_negative_slope(make_curve):
    t = np.linspace(1.0, 4.0, 10)
    with pytest.raises(NonDiffusiveError):
        fit_diffusion(make_curve(t, 10.0 - 2.0 * t), (1.0, 4.0))


def test_fit_needs_five_samples(make_curve):
    t = np.linspace(1.0, 10.0, 10)
    with pytest.raises(WindowError):
        fit_diffusion(make_curve(t, 2 * t), (1.0, 3.0))


def test_fit_is_scale_equivariant(make_curve, rng):
    t = np.linspace(1.0, 10.0, 25)
    y = 2.6 * t + rng.normal(0.0, 0.1, t.size)
    base = fit_diffusion(make_curve(t, y), (1.0, 10.0))
    scaled = fit_diffusion(make_curve(t, y).scaled(3.5), (1.0, 10.0))
    assert scaled.D == pytest.approx(3.5 * base.D, rel=1e-9)
    assert scaled.stderr == pytest.approx(3.5 * base.stderr, rel=1e-9)


def test_rescale_maps_to_wigner_units(make_curve):
    t = np.linspace(0.0, 2.0, 11)
    curve = make_curve(t, 3 * t, eps=8.0)
    rescaled = rescale_collapse([curve])[0]
    t_eps = wigner_time(8.0, -1.0)
    assert rescaled.t_eps == pytest.approx(0.25)
    assert np.allclose(rescaled.x, t / t_eps)
    assert np.allclose(rescaled.y, 3 * t * t_eps ** 2)


def test_identical_curves_collapse_perfectly(make_curve):
    t = np.geomspace(0.01, 5.0, 20)
    curve = make_curve(t, t ** 1.3 + 0.1)
    assert collapse_metric(rescale_collapse([curve, curve])) == pytest.approx(0.0, abs=1e-12)


def test_collapse_detects_offset_curves(make_curve):
    t = np.geomspace(0.01, 5.0, 20)
    a = make_curve(t, t)
    b = make_curve(t, 1.5 * t)
    assert collapse_metric(rescale_collapse([a, b])) == pytest.approx(0.4, rel=1e-6)


def test_collapse_rejects_mismatched_exponents(make_curve):
    t = np.linspace(0.1, 1.0, 5)
    with pytest.raises(ValidationError):
        rescale_collapse([make_curve(t, t, s0=1.0), make_curve(t, t, s0=1.5)])


def test_fit_power_law():
    t = np.geomspace(0.1, 10.0, 15)
    fit = fit_power_law(t, 3.0 * t ** 1.7)
    assert fit.exponent == pytest.approx(1.7)
    assert fit.prefactor == pytest.approx(3.0)
    with pytest.raises(WindowError):
        fit_power_law(t, 3.0 * t ** 1.7, window=(20.0, 30.0))


def test_fit_decay_rate():
    t = np.linspace(0.0, 2.0, 40)
    rate, stderr = fit_decay_rate(t, 0.9 * np.exp(-2.5 * t), (0.1, 1.5))
    assert rate == pytest.approx(2.5, rel=1e-6)
    assert stderr < 1e-6


def test_saturation_level(make_curve):
    t = np.geomspace(0.01, 10.0, 30)
    y = np.where(t < 0.1, 100 * t ** 2, 1.0)
    summary = saturation_level(make_curve(t, y), 0.5)
    assert summary.level == pytest.approx(1.0)
    assert abs(summary.slope) < 1e-10


def test_system_scales():
    assert SCALES.t_cl * SCALES.omega_cl == pytest.approx(2 * math.pi)
    assert SCALES.t_H == pytest.approx(2 * math.pi)
    assert SCALES.is_mesoscopic(1.0)
    assert not SCALES.is_mesoscopic(100.0)
