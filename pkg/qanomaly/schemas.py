import datetime
import math
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import Settings


class BandProfile(BaseModel):
    """
    Off-diagonal variance law of the banded random matrices:
    <|V_ij|^2> = lam * |i-j|^(s_lambda-1) for band_min <= |i-j| <= band_max.
    """
    model_config = ConfigDict(frozen=True)

    s_lambda: float = Field(..., gt=0.0, le=2.0)
    lam: float = Field(1.0, gt=0.0)
    band_min: int = Field(1, ge=1)
    band_max: int = Field(50, ge=1)

    @model_validator(mode="after")
    def band_order(self):
        """Ensure band_min <= band_max."""
        if self.band_min > self.band_max:
            raise ValueError("band_min must not exceed band_max")
        return self

    def variance(self, offset) -> np.ndarray:
        """Variance at integer offset(s) |i-j|; zero outside the band and on the diagonal."""
        k = np.abs(np.asarray(offset, dtype=float))
        inside = (k >= self.band_min) & (k <= self.band_max)
        safe = np.where(inside, k, 1.0)
        return np.where(inside, self.lam * safe ** (self.s_lambda - 1.0), 0.0)


class DrivingSpec(BaseModel):
    """
    Driving power spectrum S(w) = eps^2 |w|^-sigma delta_gamma(w), gamma = 1/t_phi.
    """
    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(..., ge=0.0)
    sigma: float = 2.0
    t_phi: float = Field(math.inf, gt=0.0)

    @property
    def gamma(self) -> float:
        return 0.0 if math.isinf(self.t_phi) else 1.0 / self.t_phi

    @classmethod
    def from_gamma(cls, epsilon: float, sigma: float, gamma: float) -> "DrivingSpec":
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        return cls(epsilon=epsilon, sigma=sigma, t_phi=1.0 / gamma)


class SystemScales(BaseModel):
    """
    Characteristic scales: t_cl = 2*pi/omega_cl, t_H = 2*pi*hbar*rho.
    """
    model_config = ConfigDict(frozen=True)

    omega0: float = Field(1.0, gt=0.0)
    omega_cl: float = Field(50.0, gt=0.0)
    hbar: float = Field(1.0, gt=0.0)
    rho: float = Field(1.0, gt=0.0)

    @model_validator(mode="after")
    def cutoff_order(self):
        if self.omega0 >= self.omega_cl:
            raise ValueError("omega0 must be smaller than omega_cl")
        return self

    @property
    def t_cl(self) -> float:
        return 2.0 * math.pi / self.omega_cl

    @property
    def t_H(self) -> float:
        return 2.0 * math.pi * self.hbar * self.rho

    @classmethod
    def from_band(cls, band_max: int, omega0: float = 1.0, hbar: float = 1.0, rho: float = 1.0) -> "SystemScales":
        return cls(omega0=omega0, omega_cl=band_max * omega0, hbar=hbar, rho=rho)

    def is_mesoscopic(self, *times: float) -> bool:
        """True when t_cl < t < t_H for every given time (and t_cl < t_H)."""
        if not self.t_cl < self.t_H:
            return False
        return all(self.t_cl < t < self.t_H for t in times)


class CurveParams(BaseModel):
    s0: float
    sigma: float
    fdot: Optional[float] = None
    eps: float
    dim: int
    band_max: int
    lam: float = 1.0
    hbar: float = 1.0
    seeds: List[int] = []

    @property
    def s(self) -> float:
        """Effective spectral exponent s = s0 - sigma."""
        return self.s0 - self.sigma


class SpreadingCurve(BaseModel):
    """
    Energy spreading Delta E(t)^2 versus time for one realization or an ensemble mean.
    """
    times: List[float]
    variance: List[float]
    stderr: List[float] = []
    n_realizations: int = Field(1, ge=1)
    mode: Literal["driven", "frozen", "quench"]
    params: CurveParams
    survival: Optional[List[float]] = None
    members: Optional[List[List[float]]] = None
    excluded_seeds: List[int] = []

    @model_validator(mode="after")
    def consistent_lengths(self):
        """Ensure the series line up and the variance is non-negative."""
        n = len(self.times)
        if len(self.variance) != n:
            raise ValueError("times and variance must have equal length")
        if not self.stderr:
            self.stderr = [0.0] * n
        if len(self.stderr) != n:
            raise ValueError("stderr must match times")
        if self.survival is not None and len(self.survival) != n:
            raise ValueError("survival must match times")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        if any(v < -1e-10 for v in self.variance):
            raise ValueError("variance must be non-negative")
        return self

    @property
    def label(self) -> str:
        fdot = "na" if self.params.fdot is None else f"{self.params.fdot:g}"
        return f"{self.mode}_s0-{self.params.s0:g}_fdot-{fdot}_eps-{self.params.eps:g}"

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.asarray(self.times), np.asarray(self.variance), np.asarray(self.stderr)

    def scaled(self, factor: float) -> "SpreadingCurve":
        """Copy with Delta E^2 (and its stderr) multiplied by factor."""
        return self.model_copy(update={
            "variance": [v * factor for v in self.variance],
            "stderr": [e * abs(factor) for e in self.stderr],
        })


class SpectralSamples(BaseModel):
    """
    Binned estimate of the spectral function on |omega| bins.
    values are two-sided densities comparable to the analytic C(omega);
    weights are the raw folded sums over reference levels.
    """
    omega_bins: List[float]
    values: List[float]
    counts: List[int]
    weights: List[float]
    n_reference: int = Field(..., ge=0)
    bin_width: float = Field(..., gt=0.0)

    @model_validator(mode="after")
    def bins_valid(self):
        if any(b <= a for a, b in zip(self.omega_bins, self.omega_bins[1:])):
            raise ValueError("omega bins must be strictly increasing")
        if any(v < 0 for v in self.values):
            raise ValueError("spectral values must be non-negative")
        return self


class DiffusionEstimate(BaseModel):
    """
    Fitted diffusion coefficient together with the scaling coordinates
    X = eps^(2/(2-s)), Y = D / eps^(6/(2-s)).
    """
    s0: float
    s: float
    fdot: Optional[float] = None
    eps: float = Field(..., gt=0.0)
    t_eps: float
    D: float = Field(..., ge=0.0)
    stderr: float = Field(0.0, ge=0.0)
    fit_window: Tuple[float, float]
    X: float
    Y: float
    quality: str = "ok"
    flags: List[str] = []
    reduced_chi2: Optional[float] = None
    slope_drift: Optional[float] = None

    @field_validator("fit_window")
    @classmethod
    def window_ordered(cls, v):
        if not v[0] < v[1]:
            raise ValueError("fit window must satisfy t_lo < t_hi")
        return v

    @model_validator(mode="after")
    def scaling_coordinates(self):
        """Ensure X and Y are recomputable from (eps, s)."""
        x = self.eps ** (2.0 / (2.0 - self.s))
        y = self.D / self.eps ** (6.0 / (2.0 - self.s))
        if not math.isclose(self.X, x, rel_tol=1e-9) or not math.isclose(self.Y, y, rel_tol=1e-9, abs_tol=1e-300):
            raise ValueError("X, Y inconsistent with (eps, s, D)")
        return self


class CollapseSummary(BaseModel):
    s0: float
    s: float
    labels: List[str]
    metric: float
    window: Tuple[float, float]


class FailureNote(BaseModel):
    point: str
    realization: int
    attempt: int
    seed: int
    error: str
    detail: str
    excluded: bool = True


class RunConfig(BaseModel):
    """
    Fully resolved configuration of one experiment.
    """
    N: int = Field(1024, gt=0)
    b: int = Field(50, ge=1)
    band_min: int = Field(1, ge=1)
    lam: float = Field(1.0, gt=0.0)
    hbar: float = Field(1.0, gt=0.0)
    rho: float = Field(1.0, gt=0.0)
    s0_list: List[float] = Field(..., min_length=1)
    fdot_list: List[float] = []
    eps_list: List[float] = []
    mode: Literal["driven", "frozen", "quench", "all"] = "all"
    realizations: int = Field(16, ge=1)
    master_seed: int = 20100301
    t_max_factor: float = Field(10.0, gt=0.0)
    sample_points: int = Field(40, ge=5)
    output_dir: str = "results"
    workers: int = Field(1, ge=1)
    retry_attempts: int = Field(2, ge=1)
    step_fraction: float = Field(0.05, gt=0.0)
    step_cap: float = Field(0.02, gt=0.0)
    norm_tolerance: float = Field(1e-8, gt=0.0)
    edge_tolerance: Optional[float] = 1e-6
    degeneracy_gap: float = Field(1e-10, ge=0.0)
    frozen_gap_floor: float = Field(1.0, ge=0.0)
    jitter: bool = False
    measurement_basis: Literal["adiabatic", "unperturbed"] = "adiabatic"
    initial_state: Literal["adiabatic", "site"] = "adiabatic"
    fit_window: Tuple[float, float] = (2.0, 8.0)
    bin_width: float = Field(1.0, gt=0.0)

    @field_validator("s0_list")
    @classmethod
    def s0_in_range(cls, v):
        """Ensure every exponent is in (0, 2)."""
        for s0 in v:
            if not 0.0 < s0 < 2.0:
                raise ValueError(f"s0={s0} outside (0, 2)")
        return v

    @field_validator("fdot_list", "eps_list")
    @classmethod
    def positive_rates(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("driving rates and strengths must be positive")
        return v

    @field_validator("fit_window")
    @classmethod
    def fit_window_ordered(cls, v):
        if not 0 < v[0] < v[1]:
            raise ValueError("fit window must satisfy 0 < lo < hi")
        return v

    @model_validator(mode="after")
    def dimension_vs_band(self):
        """Ensure N > 4b so the edge guard has room."""
        if self.N <= 4 * self.b:
            raise ValueError(f"N={self.N} must exceed 4*b={4 * self.b}")
        if self.band_min > self.b:
            raise ValueError("band_min must not exceed b")
        return self

    @property
    def scales(self) -> SystemScales:
        return SystemScales.from_band(self.b, omega0=1.0 / (self.hbar * self.rho), hbar=self.hbar, rho=self.rho)

    def profile(self, s0: float) -> BandProfile:
        return BandProfile(s_lambda=s0, lam=self.lam, band_min=self.band_min, band_max=self.b)

    @classmethod
    def from_settings(cls, source: Settings, kind: str = "fig1", **overrides) -> "RunConfig":
        """Build a config from Settings, picking the sweep for the experiment kind."""
        fdot_lists = {
            "fig1": source.FIG1_FDOT_LIST,
            "fig2": source.FIG2_FDOT_LIST,
        }
        data = dict(
            N=source.MATRIX_DIM,
            b=source.BAND_MAX,
            band_min=source.BAND_MIN,
            lam=source.SPECTRAL_LAMBDA if kind == "bandprofile" else source.LAMBDA,
            hbar=source.HBAR,
            rho=source.RHO,
            s0_list=source.S0_LIST,
            fdot_list=fdot_lists.get(kind, source.FIG1_FDOT_LIST),
            eps_list=source.QUENCH_EPS_LIST if kind == "quench" else source.KUBO_EPS_LIST,
            mode={"fig1": "all", "fig2": "driven", "quench": "quench"}.get(kind, "all"),
            realizations=source.REALIZATIONS if kind != "bandprofile" else source.SPECTRAL_REALIZATIONS,
            master_seed=source.MASTER_SEED,
            t_max_factor=source.T_MAX_FACTOR,
            sample_points=source.SAMPLE_POINTS,
            output_dir=source.OUTPUT_DIR,
            workers=source.WORKERS,
            retry_attempts=source.RETRY_ATTEMPTS,
            step_fraction=source.STEP_FRACTION,
            step_cap=source.STEP_CAP,
            norm_tolerance=source.NORM_TOLERANCE,
            edge_tolerance=source.EDGE_TOLERANCE,
            degeneracy_gap=source.DEGENERACY_GAP,
            frozen_gap_floor=source.FROZEN_GAP_FLOOR,
            jitter=source.DIAG_JITTER,
            measurement_basis=source.MEASUREMENT_BASIS,
            initial_state=source.INITIAL_STATE,
            fit_window=(source.FIT_WINDOW_LO, source.FIT_WINDOW_HI),
            bin_width=source.SPECTRAL_BIN_WIDTH,
        )
        if kind == "bandprofile":
            data["N"] = source.SPECTRAL_DIM
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def settings_update(self, kind: str = "fig1") -> Dict[str, object]:
        """Inverse of from_settings: the Settings keys this config pins down."""
        update = dict(
            BAND_MAX=self.b,
            BAND_MIN=self.band_min,
            HBAR=self.hbar,
            RHO=self.rho,
            S0_LIST=self.s0_list,
            MASTER_SEED=self.master_seed,
            T_MAX_FACTOR=self.t_max_factor,
            SAMPLE_POINTS=self.sample_points,
            OUTPUT_DIR=self.output_dir,
            WORKERS=self.workers,
            RETRY_ATTEMPTS=self.retry_attempts,
            STEP_FRACTION=self.step_fraction,
            STEP_CAP=self.step_cap,
            NORM_TOLERANCE=self.norm_tolerance,
            DEGENERACY_GAP=self.degeneracy_gap,
            FROZEN_GAP_FLOOR=self.frozen_gap_floor,
            DIAG_JITTER=self.jitter,
            MEASUREMENT_BASIS=self.measurement_basis,
            INITIAL_STATE=self.initial_state,
            FIT_WINDOW_LO=self.fit_window[0],
            FIT_WINDOW_HI=self.fit_window[1],
            SPECTRAL_BIN_WIDTH=self.bin_width,
        )
        if self.edge_tolerance is not None:
            update["EDGE_TOLERANCE"] = self.edge_tolerance
        if kind == "bandprofile":
            update.update(SPECTRAL_DIM=self.N, SPECTRAL_REALIZATIONS=self.realizations, SPECTRAL_LAMBDA=self.lam)
        else:
            update.update(MATRIX_DIM=self.N, REALIZATIONS=self.realizations, LAMBDA=self.lam)
        if self.fdot_list:
            update["FIG2_FDOT_LIST" if kind == "fig2" else "FIG1_FDOT_LIST"] = self.fdot_list
        if self.eps_list:
            update["QUENCH_EPS_LIST" if kind == "quench" else "KUBO_EPS_LIST"] = self.eps_list
        return update


class ExperimentRecord(BaseModel):
    """
    Everything one experiment produced, plus the config needed to reproduce it.
    """
    kind: Literal["fig1", "fig2", "quench", "bandprofile"]
    config: RunConfig
    curves: List[SpreadingCurve] = []
    estimates: List[DiffusionEstimate] = []
    collapse: List[CollapseSummary] = []
    failures: List[FailureNote] = []
    spectra: Dict[str, SpectralSamples] = {}
    summary: Dict[str, float] = {}
    software_version: str
    started_at: datetime.datetime
    finished_at: Optional[datetime.datetime] = None
    wall_seconds: Optional[float] = None

    @property
    def status(self) -> str:
        if any(f.excluded for f in self.failures):
            return "partial"
        return "complete"

    def payload(self) -> dict:
        """Numerical content, without wall-clock metadata."""
        return self.model_dump(mode="json", exclude={"started_at", "finished_at", "wall_seconds"})
