"""
Theory curves for coherent spreading and diffusion, fitting of simulated
spreading curves, and the Wigner-time rescaling used for scaling collapse.

All theory formulas carry unit prefactors; the fixed order-unity factors
between special cases are collected in SPECIAL_CASE_FACTORS.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import curve_fit

from .errors import DomainError, NonDiffusiveError, ValidationError, WindowError
from .schemas import DiffusionEstimate, SpreadingCurve, SystemScales

logger = logging.getLogger(__name__)

# t_eps(s=1) / (hbar/Gamma_E) and t_eps(s=-1) / (hbar^2/D_kubo)^(1/3) with D_kubo = pi*eps^2.
SPECIAL_CASE_FACTORS = {
    "ohmic_quench": 2.0 * math.pi,
    "ohmic_dc": math.pi ** (1.0 / 3.0),
}

CHI2_THRESHOLD = 10.0
SLOPE_DRIFT_THRESHOLD = 0.5


def wigner_time(eps: float, s: float, hbar: float = 1.0) -> float:
    """t_eps = (hbar/eps)^(2/(2-s))."""
    if s >= 2:
        raise DomainError(f"generalized Wigner time undefined for s={s} >= 2")
    if eps <= 0:
        raise DomainError(f"driving strength must be positive, got eps={eps}")
    return (hbar / eps) ** (2.0 / (2.0 - s))


def universal_diffusion(eps: float, s: float, hbar: float = 1.0) -> float:
    """D_eps = hbar^2 / t_eps^3."""
    return hbar ** 2 / wigner_time(eps, s, hbar) ** 3


def fgr_rate(eps: float, hbar: float = 1.0) -> float:
    """Fermi-golden-rule rate Gamma_E = 2*pi*eps^2/hbar."""
    if eps < 0:
        raise ValidationError(f"eps must be non-negative, got {eps}")
    return 2.0 * math.pi * eps ** 2 / hbar


def theory_spreading(s: float, eps: float, t: float, scales: SystemScales) -> float:
    """
    Coherent spreading Delta E(t):
      s > 0:            eps * omega_cl^(s/2)            (t > t_cl)
      s < 0, t < t_eps: eps * t^(|s|/2)                 (t > t_cl)
      s < 0, t > t_eps: hbar / t_eps
    Below t_cl the value at t_cl is continued linearly in t.
    """
    if t <= 0:
        raise ValidationError(f"time must be positive, got {t}")
    if s == 0:
        raise DomainError("coherent spreading regimes are not defined for s=0")

    t_cl = scales.t_cl
    if s > 0:
        plateau = eps * scales.omega_cl ** (s / 2.0)
        return plateau * min(t, t_cl) / t_cl

    t_eps = wigner_time(eps, s, scales.hbar)
    if t >= t_eps:
        return scales.hbar / t_eps
    if t < t_cl:
        return eps * t_cl ** (abs(s) / 2.0) * t / t_cl
    return eps * t ** (abs(s) / 2.0)


def central_limit_diffusion(spread: float, t_phi: float) -> float:
    """D = Delta E(t_phi)^2 / (2 t_phi)."""
    if t_phi <= 0:
        raise ValidationError("t_phi must be positive")
    return spread ** 2 / (2.0 * t_phi)


def theory_diffusion(
    s: float,
    eps: float,
    t_phi: float,
    scales: SystemScales,
    regime: Literal["auto", "weak", "strong", "intrinsic"] = "auto",
) -> float:
    """
    Diffusion coefficient with unit prefactors:
      s > 0:                eps^2 omega_cl^s / t_phi
      s < 0, weak driving:  eps^2 t_phi^(|s|-1)                            (t_phi < t_eps)
      s < 0, strong:        hbar^(2|s|/(2+|s|)) eps^(4/(2+|s|)) / t_phi    (t_phi > t_eps)
      intrinsic:            hbar^2 / t_eps^3                               (t_phi -> t_eps)
    """
    if s == 0:
        raise DomainError("diffusion regimes are not defined for s=0")
    hbar = scales.hbar
    if regime == "intrinsic":
        return universal_diffusion(eps, s, hbar)
    if t_phi <= 0:
        raise ValidationError("t_phi must be positive unless regime is intrinsic")
    if s > 0:
        return eps ** 2 * scales.omega_cl ** s / t_phi

    t_eps = wigner_time(eps, s, hbar)
    if regime == "auto":
        regime = "weak" if t_phi < t_eps else "strong"
    if regime == "weak":
        if t_phi > t_eps:
            raise ValidationError(f"weak-driving formula needs t_phi < t_eps ({t_phi:.4g} > {t_eps:.4g})")
        return eps ** 2 * t_phi ** (abs(s) - 1.0)
    if regime == "strong":
        if t_phi < t_eps:
            raise ValidationError(f"strong-driving formula needs t_phi > t_eps ({t_phi:.4g} < {t_eps:.4g})")
        a = abs(s)
        return hbar ** (2.0 * a / (2.0 + a)) * eps ** (4.0 / (2.0 + a)) / t_phi
    raise ValidationError(f"unknown regime {regime}")


def core_width(s: float, eps: float, t: float, hbar: float = 1.0) -> float:
    """gamma(t) = [t^|s| + (eps t/hbar)^-2]^(-1/|s|)."""
    if s >= 0:
        raise DomainError(f"core width is defined for s < 0, got s={s}")
    if t <= 0:
        raise ValidationError("time must be positive")
    a = abs(s)
    return (t ** a + (eps * t / hbar) ** -2.0) ** (-1.0 / a)


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    exponent_stderr: float


def fit_power_law(t, y, window: Optional[Tuple[float, float]] = None) -> PowerLawFit:
    """Least-squares line through (log t, log y) for positive samples inside window."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (t > 0) & (y > 0)
    if window is not None:
        keep &= (t >= window[0]) & (t <= window[1])
    if keep.sum() < 3:
        raise WindowError(f"power-law fit needs at least 3 positive samples, got {int(keep.sum())}")

    lt, ly = np.log(t[keep]), np.log(y[keep])
    if keep.sum() > 3:
        coef, cov = np.polyfit(lt, ly, 1, cov=True)
        stderr = float(np.sqrt(max(cov[0, 0], 0.0)))
    else:
        coef = np.polyfit(lt, ly, 1)
        stderr = float("nan")
    return PowerLawFit(exponent=float(coef[0]), prefactor=float(np.exp(coef[1])), exponent_stderr=stderr)


def fit_decay_rate(t, survival, window: Tuple[float, float]) -> Tuple[float, float]:
    """Fit P(t) = A exp(-G t) on window; returns (G, stderr)."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(survival, dtype=float)
    keep = (t >= window[0]) & (t <= window[1]) & (p > 0)
    if keep.sum() < 4:
        raise WindowError(f"decay fit needs at least 4 samples in {window}, got {int(keep.sum())}")

    guess = np.polyfit(t[keep], np.log(p[keep]), 1)
    params, cov = curve_fit(
        lambda x, rate, amp: amp * np.exp(-rate * x),
        t[keep],
        p[keep],
        p0=(max(-guess[0], 1e-12), float(np.exp(guess[1]))),
        maxfev=10000,
    )
    return float(params[0]), float(np.sqrt(max(cov[0, 0], 0.0)))


@dataclass(frozen=True)
class SaturationSummary:
    level: float
    slope: float


def saturation_level(curve: SpreadingCurve, t_from: float) -> SaturationSummary:
    """Mean late-time Delta E^2 for t >= t_from, with its log-log slope."""
    t, var, _ = curve.arrays()
    keep = t >= t_from
    if keep.sum() < 3:
        raise WindowError(f"need at least 3 samples after t={t_from:.4g}")
    slope = fit_power_law(t[keep], var[keep]).exponent
    return SaturationSummary(level=float(var[keep].mean()), slope=slope)


def fit_diffusion(
    curve: SpreadingCurve,
    window: Tuple[float, float],
    chi2_threshold: float = CHI2_THRESHOLD,
    drift_threshold: float = SLOPE_DRIFT_THRESHOLD,
) -> DiffusionEstimate:
    """
    Weighted least squares of Delta E^2(t) = 2 D t + c on window.
    Weights are 1/stderr^2 when every sample in the window carries a positive stderr.
    """
    t_lo, t_hi = window
    if not t_lo < t_hi:
        raise WindowError(f"fit window must satisfy t_lo < t_hi, got {window}")
    t, var, err = curve.arrays()
    keep = (t >= t_lo) & (t <= t_hi)
    n = int(keep.sum())
    if n < 5:
        raise WindowError(f"fit window {window} holds {n} samples, need at least 5")
    t, var, err = t[keep], var[keep], err[keep]

    weighted = bool(np.all(err > 0))
    w = 1.0 / err if weighted else None
    coef, cov = np.polyfit(t, var, 1, w=w, cov="unscaled" if weighted else True)
    D = coef[0] / 2.0
    stderr = float(np.sqrt(max(cov[0, 0], 0.0))) / 2.0

    residuals = var - np.polyval(coef, t)
    reduced_chi2 = float(np.sum((residuals / err) ** 2) / (n - 2)) if weighted else None

    scale = max(np.abs(var).max(), 1e-300) / t_hi
    quad = np.polyfit(t, var, 2, w=w)
    slope_change = abs(2.0 * quad[0] * (t_hi - t_lo))
    if abs(coef[0]) > 1e-12 * scale:
        slope_drift = float(slope_change / abs(coef[0]))
    else:
        slope_drift = 0.0 if slope_change <= 1e-12 * scale else math.inf

    flags: List[str] = []
    if D < 0:
        if -D > 2.0 * stderr + 1e-12 * scale:
            raise NonDiffusiveError(float(D), stderr)
        D = 0.0
        flags.append("clipped_negative")
    if reduced_chi2 is not None and reduced_chi2 > chi2_threshold:
        flags.append("chi2")
    if slope_drift > drift_threshold:
        flags.append("curvature")

    eps, s = curve.params.eps, curve.params.s
    t_eps = wigner_time(eps, s, curve.params.hbar)
    quality = "non_diffusive" if ({"chi2", "curvature"} & set(flags)) else "ok"
    if quality != "ok":
        logger.warning(f"Diffusion fit for {curve.label} flagged {flags} (chi2={reduced_chi2}, drift={slope_drift:.3g})")

    return DiffusionEstimate(
        s0=curve.params.s0,
        s=s,
        fdot=curve.params.fdot,
        eps=eps,
        t_eps=t_eps,
        D=float(D),
        stderr=stderr,
        fit_window=(float(t_lo), float(t_hi)),
        X=eps ** (2.0 / (2.0 - s)),
        Y=float(D) / eps ** (6.0 / (2.0 - s)),
        quality=quality,
        flags=flags,
        reduced_chi2=reduced_chi2,
        slope_drift=slope_drift,
    )


@dataclass(frozen=True)
class RescaledCurve:
    label: str
    s: float
    t_eps: float
    x: np.ndarray
    y: np.ndarray


def rescale_collapse(curves: Sequence[SpreadingCurve]) -> List[RescaledCurve]:
    """Map each curve to (t/t_eps, Delta E^2 * t_eps^2 / hbar^2)."""
    if not curves:
        return []
    s_ref = curves[0].params.s
    for curve in curves[1:]:
        if not math.isclose(curve.params.s, s_ref, abs_tol=1e-12):
            raise ValidationError(f"cannot collapse curves with different s ({curve.params.s} vs {s_ref})")

    rescaled = []
    for curve in curves:
        hbar = curve.params.hbar
        t_eps = wigner_time(curve.params.eps, curve.params.s, hbar)
        t, var, _ = curve.arrays()
        rescaled.append(RescaledCurve(
            label=curve.label,
            s=s_ref,
            t_eps=t_eps,
            x=t / t_eps,
            y=var * t_eps ** 2 / hbar ** 2,
        ))
    return rescaled


def transient_window(rescaled: Sequence[RescaledCurve], scales: SystemScales) -> Tuple[float, float]:
    """Common t/t_eps range between t_cl and t_eps for all curves."""
    lo = max(scales.t_cl / r.t_eps for r in rescaled)
    return lo, 1.0


def common_range(rescaled: Sequence[RescaledCurve]) -> Tuple[float, float]:
    """Positive x-range covered by every curve."""
    lo = max(float(r.x[r.x > 0].min()) for r in rescaled)
    hi = min(float(r.x.max()) for r in rescaled)
    return lo, hi


def collapse_metric(rescaled: Sequence[RescaledCurve], window: Optional[Tuple[float, float]] = None, points: int = 50) -> float:
    """
    Max over the common x-range (intersected with window) of (max - min)/mean
    across curves, with log-log interpolation.
    """
    if len(rescaled) < 2:
        return 0.0
    lo, hi = common_range(rescaled)
    if window is not None:
        lo, hi = max(lo, window[0]), min(hi, window[1])
    if not lo < hi:
        raise WindowError(f"curves share no x-range inside {window}")

    grid = np.geomspace(lo, hi, points)
    stack = []
    for r in rescaled:
        keep = (r.x > 0) & (r.y > 0)
        stack.append(np.exp(np.interp(np.log(grid), np.log(r.x[keep]), np.log(r.y[keep]))))
    stack = np.vstack(stack)
    spread = (stack.max(axis=0) - stack.min(axis=0)) / stack.mean(axis=0)
    return float(spread.max())
