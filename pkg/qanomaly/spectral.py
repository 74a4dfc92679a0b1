"""
Spectral functions of the driving and of the system fluctuations, and the
Kubo quadrature  D = 1/2 * integral w^2 C(w) S(w) dw  used as the linear-response oracle.
"""
import logging
import math
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from .analysis import fit_power_law
from .errors import DivergenceError, SingularityError, ValidationError
from .schemas import DrivingSpec, SpectralSamples

logger = logging.getLogger(__name__)

# Lorentzian core is integrated separately on [0, _CORE_WIDTHS * gamma].
_CORE_WIDTHS = 50.0


def _as_output(result: np.ndarray):
    return float(result) if result.ndim == 0 else result


def driving_spectrum(spec: DrivingSpec, omega):
    """S(w) = eps^2 |w|^-sigma (gamma/pi) / (w^2 + gamma^2)."""
    omega = np.asarray(omega, dtype=float)
    if spec.sigma > 0 and np.any(omega == 0):
        raise SingularityError(f"S(omega) is singular at omega=0 for sigma={spec.sigma}")
    gamma = spec.gamma
    if gamma <= 0:
        raise ValidationError("driving spectrum needs a finite correlation time t_phi")

    lorentzian = (gamma / math.pi) / (omega ** 2 + gamma ** 2)
    power = np.abs(omega) ** (-spec.sigma) if spec.sigma != 0 else np.ones_like(omega)
    return _as_output(spec.epsilon ** 2 * power * lorentzian)


def analytic_C(s0: float, omega, omega0: float, omega_cl: float):
    """C(w) = 2*pi*|w|^(s0-1) for omega0 <= |w| <= omega_cl, zero outside."""
    if not 0.0 < s0 < 2.0:
        raise ValidationError(f"s0={s0} outside (0, 2)")
    if not omega0 < omega_cl:
        raise ValidationError("omega0 must be smaller than omega_cl")

    omega = np.abs(np.asarray(omega, dtype=float))
    inside = (omega >= omega0) & (omega <= omega_cl)
    safe = np.where(inside, omega, 1.0)
    return _as_output(np.where(inside, 2.0 * math.pi * safe ** (s0 - 1.0), 0.0))


def kubo_diffusion(
    s0: float,
    spec: DrivingSpec,
    omega0: float,
    omega_cl: float,
    infrared_cutoff: bool = False,
    epsrel: float = 1e-10,
) -> float:
    """
    D = 1/2 * integral w^2 C(w) S(w) dw over both signs of w, i.e.
    D = 2 eps^2 gamma * integral_lo^omega_cl w^(s0+1-sigma) / (w^2 + gamma^2) dw.

    The default (infrared_cutoff=False) integrates the continuum from w=0 up to omega_cl;
    omega0 is then only checked as a level-spacing scale. Pass infrared_cutoff=True to
    restrict the integral to the window omega0 < |w| < omega_cl, which is what a finite
    spectrum with spacing hbar*omega0 actually resolves. The two agree when the
    integrand weight below omega0 is negligible.
    """
    if not 0.0 < s0 < 2.0:
        raise ValidationError(f"s0={s0} outside (0, 2)")
    if not 0.0 < omega0 < omega_cl:
        raise ValidationError("cutoffs must satisfy 0 < omega0 < omega_cl")
    if spec.epsilon == 0:
        return 0.0
    gamma = spec.gamma
    if gamma <= 0:
        raise ValidationError("Kubo quadrature needs a finite correlation time t_phi")

    power = s0 + 1.0 - spec.sigma
    lo = omega0 if infrared_cutoff else 0.0
    hi = omega_cl
    if lo == 0.0 and power <= -1.0:
        raise DivergenceError(f"integrand ~ w^{power:g} is not integrable at w=0; use the infrared cutoff")
    if math.isinf(hi) and power >= 1.0:
        raise DivergenceError(f"integrand ~ w^{power - 2:g} is not integrable at w=inf; set a finite omega_cl")

    def lorentz(w):
        return 1.0 / (w * w + gamma * gamma)

    def full(w):
        return w ** power / (w * w + gamma * gamma)

    opts = dict(epsabs=0.0, epsrel=epsrel, limit=400)
    split = _CORE_WIDTHS * gamma
    total = 0.0
    if lo == 0.0:
        core_hi = min(split, hi)
        value, _ = integrate.quad(lorentz, 0.0, core_hi, weight="alg", wvar=(power, 0.0), **opts)
        total += value
        if core_hi < hi:
            value, _ = integrate.quad(full, core_hi, hi, **opts)
            total += value
    elif lo < split < hi:
        total += integrate.quad(full, lo, split, **opts)[0]
        total += integrate.quad(full, split, hi, **opts)[0]
    else:
        total += integrate.quad(full, lo, hi, **opts)[0]

    D = spec.epsilon ** 2 * (2.0 * gamma * total)
    logger.debug(f"Kubo quadrature: s0={s0}, sigma={spec.sigma}, gamma={gamma:.3g}, window=[{lo}, {hi}] -> D={D:.6g}")
    return float(D)


def _reference_levels(dim: int, window_fraction: float, edge_exclusion: int) -> np.ndarray:
    margin = int(round(dim * (1.0 - window_fraction) / 2.0))
    lo = max(margin, edge_exclusion)
    hi = min(dim - margin, dim - edge_exclusion)
    return np.arange(lo, hi)


def estimate_C(
    V_adiabatic: np.ndarray,
    energies: np.ndarray,
    bin_width: float = 1.0,
    reference_levels: Optional[Iterable[int]] = None,
    window_fraction: float = 0.5,
    edge_exclusion: int = 0,
    hbar: float = 1.0,
) -> SpectralSamples:
    """
    Histogram of sum_n |V_{n,n0}|^2 2*pi on |w| = |E_n - E_n0|/hbar, averaged over the
    reference levels n0. Bins are centered on k*bin_width, k >= 1; both signs of w fold into
    one bin and values are halved back to a two-sided density.
    """
    V = np.asarray(V_adiabatic)
    energies = np.asarray(energies, dtype=float)
    dim = energies.size
    if V.shape != (dim, dim):
        raise ValidationError(f"matrix shape {V.shape} does not match {dim} energies")
    if bin_width <= 0:
        raise ValidationError("bin_width must be positive")

    if reference_levels is None:
        refs = _reference_levels(dim, window_fraction, edge_exclusion)
    else:
        refs = np.asarray(list(reference_levels), dtype=int)
    if refs.size == 0:
        raise ValidationError("no reference levels inside the averaging window")

    omegas = np.abs(energies[:, None] - energies[refs][None, :]) / hbar
    weights = 2.0 * math.pi * np.abs(V[:, refs]) ** 2
    mask = np.ones_like(omegas, dtype=bool)
    mask[refs, np.arange(refs.size)] = False

    max_omega = omegas[mask].max() if mask.any() else bin_width
    n_bins = max(1, int(np.floor(max_omega / bin_width + 0.5)))
    edges = (np.arange(n_bins + 1) + 0.5) * bin_width
    summed, _ = np.histogram(omegas[mask], bins=edges, weights=weights[mask])
    counts, _ = np.histogram(omegas[mask], bins=edges)

    values = summed / (2.0 * refs.size * bin_width)
    return SpectralSamples(
        omega_bins=list(np.arange(1, n_bins + 1) * bin_width),
        values=values.tolist(),
        counts=counts.astype(int).tolist(),
        weights=summed.tolist(),
        n_reference=int(refs.size),
        bin_width=bin_width,
    )


def combine_spectral_samples(samples: Sequence[SpectralSamples]) -> SpectralSamples:
    """Pool several estimates (same bin width) into one reference-weighted average."""
    if not samples:
        raise ValidationError("nothing to combine")
    bin_width = samples[0].bin_width
    if any(not math.isclose(s.bin_width, bin_width) for s in samples):
        raise ValidationError("spectral samples use different bin widths")

    n_bins = max(len(s.omega_bins) for s in samples)
    weights = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=int)
    n_reference = 0
    for s in samples:
        k = len(s.omega_bins)
        weights[:k] += s.weights
        counts[:k] += s.counts
        n_reference += s.n_reference

    values = weights / (2.0 * n_reference * bin_width)
    return SpectralSamples(
        omega_bins=list(np.arange(1, n_bins + 1) * bin_width),
        values=values.tolist(),
        counts=counts.tolist(),
        weights=weights.tolist(),
        n_reference=n_reference,
        bin_width=bin_width,
    )


def fit_spectral_slope(samples: SpectralSamples, omega_range: Tuple[float, float]) -> Tuple[float, float]:
    """Log-log slope of C(w) over the populated bins inside omega_range."""
    omega = np.asarray(samples.omega_bins)
    values = np.asarray(samples.values)
    counts = np.asarray(samples.counts)
    keep = (omega >= omega_range[0]) & (omega <= omega_range[1]) & (counts > 0) & (values > 0)
    fit = fit_power_law(omega[keep], values[keep])
    return fit.exponent, fit.exponent_stderr
