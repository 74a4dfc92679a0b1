"""
Experiment protocols: seeded ensemble execution over (parameter point x realization)
tasks, the driven/frozen spreading comparison, the diffusion-versus-driving sweep,
quench runs, the bandprofile check and the Kubo oracle table.
"""
import datetime
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel
from tenacity import Retrying, before_sleep_log, retry_if_exception_type, stop_after_attempt

from . import __version__
from .analysis import (
    collapse_metric,
    common_range,
    fgr_rate,
    fit_decay_rate,
    fit_diffusion,
    fit_power_law,
    rescale_collapse,
    saturation_level,
    transient_window,
    wigner_time,
)
from .dynamics import WaveState, run_driven, run_frozen, run_quench, sample_time_grid
from .ensemble import adiabatic_coupling, derive_seed, make_driven_system
from .errors import (
    DegeneracyError,
    EdgeGuardError,
    IntegrationError,
    NonDiffusiveError,
    ValidationError,
    WindowError,
)
from .schemas import (
    CollapseSummary,
    DiffusionEstimate,
    DrivingSpec,
    ExperimentRecord,
    FailureNote,
    RunConfig,
    SpreadingCurve,
)
from .spectral import combine_spectral_samples, estimate_C, fit_spectral_slope, kubo_diffusion

logger = logging.getLogger(__name__)

RETRYABLE = (EdgeGuardError, DegeneracyError, IntegrationError)


class EnsemblePoint(BaseModel):
    """One parameter point of a sweep; strength is fdot for driven/frozen runs and eps for quenches."""
    mode: Literal["driven", "frozen", "quench"]
    s0_index: int
    s0: float
    strength: float

    @property
    def label(self) -> str:
        key = "eps" if self.mode == "quench" else "fdot"
        return f"{self.mode}_s0-{self.s0:g}_{key}-{self.strength:g}"

    @property
    def sigma(self) -> float:
        return 0.0 if self.mode == "quench" else 2.0

    def eps(self, config: RunConfig) -> float:
        return math.sqrt(config.lam) * self.strength

    def sample_times(self, config: RunConfig) -> List[float]:
        scales = config.scales
        t_eps = wigner_time(self.eps(config), self.s0 - self.sigma, config.hbar)
        t_hi = config.t_max_factor * t_eps
        if self.mode == "quench":
            t_hi = min(t_hi, scales.t_H)
        t_lo = min(scales.t_cl, t_eps) / 10.0
        return sample_time_grid(t_lo, max(t_hi, 2.0 * t_lo), config.sample_points)


class RealizationTask(BaseModel):
    point: EnsemblePoint
    realization: int
    config: RunConfig


class RealizationResult(BaseModel):
    point: EnsemblePoint
    realization: int
    seed: int
    attempts: int
    variance: Optional[List[float]] = None
    survival: Optional[List[float]] = None
    failure: Optional[FailureNote] = None


def _simulate(point: EnsemblePoint, config: RunConfig, seed: int, times: List[float]) -> SpreadingCurve:
    profile = config.profile(point.s0)
    if point.mode == "quench":
        sys = make_driven_system(profile, config.N, 0.0, seed, hbar=config.hbar, rho=config.rho, jitter=config.jitter)
        return run_quench(
            np.diag(sys.diag), sys.V1, point.strength, WaveState.site(config.N, config.N // 2), times,
            s0=point.s0,
            lam=config.lam,
            hbar=config.hbar,
            seed=seed,
            norm_tolerance=config.norm_tolerance,
            edge_tolerance=config.edge_tolerance,
        )

    sys = make_driven_system(profile, config.N, point.strength, seed, hbar=config.hbar, rho=config.rho, jitter=config.jitter)
    common = dict(
        s0=point.s0,
        seed=seed,
        norm_tolerance=config.norm_tolerance,
        edge_tolerance=config.edge_tolerance,
        degeneracy_gap=config.degeneracy_gap,
        measurement_basis=config.measurement_basis,
        initial_state=config.initial_state,
    )
    if point.mode == "frozen":
        # floor is given in mean level spacings
        return run_frozen(sys, times, gap_floor=config.frozen_gap_floor / config.rho, **common)
    return run_driven(sys, times, step_fraction=config.step_fraction, step_cap=config.step_cap, **common)


def run_realization(task: RealizationTask) -> RealizationResult:
    """
    Run one ensemble member. Retryable numerical failures are retried with a fresh
    derived seed; after the last attempt the member is returned flagged.
    """
    point, config = task.point, task.config
    times = point.sample_times(config)
    seed = derive_seed(config.master_seed, point.s0_index, task.realization, 0)
    attempts = 0

    try:
        for attempt in Retrying(
            stop=stop_after_attempt(config.retry_attempts),
            retry=retry_if_exception_type(RETRYABLE),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        ):
            with attempt:
                attempts = attempt.retry_state.attempt_number
                seed = derive_seed(config.master_seed, point.s0_index, task.realization, attempts - 1)
                logger.debug(f"Starting {point.label} realization {task.realization} (attempt {attempts}, seed {seed})")
                curve = _simulate(point, config, seed, times)
    except RETRYABLE as e:
        logger.warning(f"Excluding {point.label} realization {task.realization} after {attempts} attempts: {e.detail}")
        note = FailureNote(
            point=point.label,
            realization=task.realization,
            attempt=attempts,
            seed=seed,
            error=type(e).__name__,
            detail=e.detail,
        )
        return RealizationResult(point=point, realization=task.realization, seed=seed, attempts=attempts, failure=note)

    logger.debug(f"Finished {point.label} realization {task.realization}")
    return RealizationResult(
        point=point,
        realization=task.realization,
        seed=seed,
        attempts=attempts,
        variance=curve.variance,
        survival=curve.survival,
    )


def reduce_point(point: EnsemblePoint, results: Sequence[RealizationResult], config: RunConfig) -> Optional[SpreadingCurve]:
    """Ordered mean and standard error over the surviving members of one point."""
    kept = [r for r in results if r.failure is None]
    excluded = [r.seed for r in results if r.failure is not None]
    if not kept:
        logger.error(f"All {len(results)} realizations of {point.label} failed; no curve produced")
        return None

    members = np.array([r.variance for r in kept], dtype=float)
    mean = members.mean(axis=0)
    if len(kept) > 1:
        stderr = members.std(axis=0, ddof=1) / math.sqrt(len(kept))
    else:
        stderr = np.zeros_like(mean)
    survival = np.array([r.survival for r in kept], dtype=float).mean(axis=0)

    eps = point.eps(config)
    return SpreadingCurve(
        times=point.sample_times(config),
        variance=mean.tolist(),
        stderr=stderr.tolist(),
        n_realizations=len(kept),
        mode=point.mode,
        params={
            "s0": point.s0,
            "sigma": point.sigma,
            "fdot": None if point.mode == "quench" else point.strength,
            "eps": eps,
            "dim": config.N,
            "band_max": config.b,
            "lam": config.lam,
            "hbar": config.hbar,
            "seeds": [r.seed for r in kept],
        },
        survival=survival.tolist(),
        members=members.tolist(),
        excluded_seeds=excluded,
    )


def run_ensemble(points: Sequence[EnsemblePoint], config: RunConfig) -> Tuple[List[SpreadingCurve], List[FailureNote]]:
    """
    Run every (point x realization) task and reduce each point in a fixed order,
    so the payload does not depend on the worker count.
    """
    tasks = [
        RealizationTask(point=point, realization=r, config=config)
        for point in points
        for r in range(config.realizations)
    ]
    logger.info(f"Running {len(tasks)} tasks over {len(points)} points with {config.workers} worker(s)")

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            results = list(executor.map(run_realization, tasks))
    else:
        results = [run_realization(task) for task in tasks]

    curves: List[SpreadingCurve] = []
    failures: List[FailureNote] = []
    for i, point in enumerate(points):
        group = results[i * config.realizations:(i + 1) * config.realizations]
        failures.extend(r.failure for r in group if r.failure is not None)
        curve = reduce_point(point, group, config)
        if curve is not None:
            curves.append(curve)
            logger.info(
                f"{point.label}: {curve.n_realizations}/{config.realizations} members, "
                f"final dE2={curve.variance[-1]:.4g}"
            )
    return curves, failures


def _new_record(kind: str, config: RunConfig) -> ExperimentRecord:
    return ExperimentRecord(
        kind=kind,
        config=config,
        software_version=__version__,
        started_at=datetime.datetime.now(datetime.timezone.utc),
    )


def _finish(record: ExperimentRecord, started: float) -> ExperimentRecord:
    record.finished_at = datetime.datetime.now(datetime.timezone.utc)
    record.wall_seconds = time.perf_counter() - started
    logger.info(
        f"{record.kind} finished in {record.wall_seconds:.1f}s: {len(record.curves)} curves, "
        f"{len(record.estimates)} estimates, {len(record.failures)} failures ({record.status})"
    )
    return record


def _collapse(curves: Sequence[SpreadingCurve], config: RunConfig) -> Optional[CollapseSummary]:
    if len(curves) < 2:
        return None
    rescaled = rescale_collapse(curves)
    window = transient_window(rescaled, config.scales)
    try:
        metric = collapse_metric(rescaled, window)
    except WindowError:
        logger.warning(f"No common transient window for {[c.label for c in curves]}; using the full overlap")
        window = common_range(rescaled)
        metric = collapse_metric(rescaled, window)
    first = curves[0].params
    return CollapseSummary(
        s0=first.s0,
        s=first.s,
        labels=[c.label for c in curves],
        metric=metric,
        window=window,
    )


def run_fig1(config: RunConfig) -> ExperimentRecord:
    """Driven and frozen spreading for every (s0, fdot), with the Wigner-time collapse per s0."""
    if not config.fdot_list:
        raise ValidationError("fdot_list must not be empty")
    started = time.perf_counter()
    record = _new_record("fig1", config)

    modes = ["driven", "frozen"] if config.mode == "all" else [config.mode]
    if "quench" in modes:
        raise ValidationError("fig1 runs driven and/or frozen modes only")
    points = [
        EnsemblePoint(mode=mode, s0_index=i, s0=s0, strength=fdot)
        for i, s0 in enumerate(config.s0_list)
        for fdot in config.fdot_list
        for mode in modes
    ]
    record.curves, record.failures = run_ensemble(points, config)

    for s0 in config.s0_list:
        for mode in modes:
            group = [c for c in record.curves if c.mode == mode and c.params.s0 == s0]
            summary = _collapse(group, config)
            if summary is not None:
                record.collapse.append(summary)
                record.summary[f"collapse_{mode}_s0-{s0:g}"] = summary.metric
                logger.info(f"Collapse of {mode} curves at s0={s0:g}: relative spread {summary.metric:.3f}")
    return _finish(record, started)


def _check_x_range(config: RunConfig) -> None:
    scales = config.scales
    for s0 in config.s0_list:
        s = s0 - 2.0
        xs = [(math.sqrt(config.lam) * fdot) ** (2.0 / (2.0 - s)) for fdot in config.fdot_list]
        if max(xs) / min(xs) < 10.0:
            logger.warning(f"Driving rates span X in [{min(xs):.3g}, {max(xs):.3g}] for s0={s0:g}, less than a decade")
        for fdot, x in zip(config.fdot_list, xs):
            if not scales.omega0 < x < scales.omega_cl:
                logger.warning(f"X={x:.3g} at fdot={fdot:g}, s0={s0:g} lies outside ({scales.omega0:g}, {scales.omega_cl:g})")


def estimate_for(curve: SpreadingCurve, config: RunConfig) -> DiffusionEstimate:
    """Fit D on [lo, hi] * t_eps; a significantly negative slope is kept as a non-diffusive point."""
    t_eps = wigner_time(curve.params.eps, curve.params.s, curve.params.hbar)
    window = (config.fit_window[0] * t_eps, config.fit_window[1] * t_eps)
    try:
        return fit_diffusion(curve, window)
    except NonDiffusiveError as e:
        logger.warning(f"{curve.label}: {e.detail}")
        s, eps = curve.params.s, curve.params.eps
        return DiffusionEstimate(
            s0=curve.params.s0,
            s=s,
            fdot=curve.params.fdot,
            eps=eps,
            t_eps=t_eps,
            D=0.0,
            stderr=e.stderr,
            fit_window=window,
            X=eps ** (2.0 / (2.0 - s)),
            Y=0.0,
            quality="non_diffusive",
            flags=["negative_slope"],
        )


def run_fig2(config: RunConfig) -> ExperimentRecord:
    """Driven runs over the fdot sweep, diffusion fits, and the (X, Y) table."""
    if not config.fdot_list:
        raise ValidationError("fdot_list must not be empty")
    started = time.perf_counter()
    record = _new_record("fig2", config)
    _check_x_range(config)

    points = [
        EnsemblePoint(mode="driven", s0_index=i, s0=s0, strength=fdot)
        for i, s0 in enumerate(config.s0_list)
        for fdot in config.fdot_list
    ]
    record.curves, record.failures = run_ensemble(points, config)

    for curve in record.curves:
        try:
            estimate = estimate_for(curve, config)
        except WindowError as e:
            logger.warning(f"{curve.label}: {e.detail}")
            record.failures.append(FailureNote(
                point=curve.label, realization=-1, attempt=0, seed=0,
                error="WindowError", detail=e.detail, excluded=False,
            ))
            continue
        record.estimates.append(estimate)
        logger.info(f"{curve.label}: D={estimate.D:.4g} +/- {estimate.stderr:.2g}, X={estimate.X:.3g}, Y={estimate.Y:.3g} [{estimate.quality}]")
    return _finish(record, started)


def run_quench_experiment(config: RunConfig) -> ExperimentRecord:
    """
    Static quenches H0 + eps V for every (s0, eps): saturation levels after 3 t_cl,
    survival decay rates against the golden-rule rate, and the level-versus-eps^2 slope.
    """
    if not config.eps_list:
        raise ValidationError("eps_list must not be empty")
    started = time.perf_counter()
    record = _new_record("quench", config)
    scales = config.scales

    points = [
        EnsemblePoint(mode="quench", s0_index=i, s0=s0, strength=eps)
        for i, s0 in enumerate(config.s0_list)
        for eps in config.eps_list
    ]
    record.curves, record.failures = run_ensemble(points, config)

    for s0 in config.s0_list:
        group = [c for c in record.curves if c.params.s0 == s0]
        levels, eps2 = [], []
        for curve in group:
            key = curve.label
            try:
                sat = saturation_level(curve, 3.0 * scales.t_cl)
                record.summary[f"saturation_{key}"] = sat.level
                record.summary[f"saturation_slope_{key}"] = sat.slope
                levels.append(sat.level)
                eps2.append(curve.params.eps ** 2)
            except WindowError as e:
                logger.warning(f"{key}: {e.detail}")

            rate = fgr_rate(curve.params.eps, config.hbar)
            record.summary[f"fgr_rate_{key}"] = rate
            try:
                fitted, _ = fit_decay_rate(curve.times, curve.survival, (2.0 * scales.t_cl, 2.0 / rate))
                record.summary[f"decay_rate_{key}"] = fitted
            except (WindowError, RuntimeError) as e:
                logger.warning(f"{key}: survival decay fit failed: {e}")
        if len(levels) >= 3:
            record.summary[f"level_vs_eps2_slope_s0-{s0:g}"] = fit_power_law(eps2, levels).exponent
    return _finish(record, started)


def _bandprofile_realization(args: Tuple[RunConfig, int, float, int]):
    config, s0_index, s0, realization = args
    seed = derive_seed(config.master_seed, s0_index, realization, 0)
    sys = make_driven_system(
        config.profile(s0), config.N, 1.0, seed, hbar=config.hbar, rho=config.rho, jitter=config.jitter
    )
    energies, _, v_nm, w_nm = adiabatic_coupling(sys, config.degeneracy_gap)
    edge = config.b
    # both profiles are read in the H(0) eigenbasis
    c_v = estimate_C(v_nm, energies, config.bin_width, edge_exclusion=edge, hbar=config.hbar)
    c_w = estimate_C(w_nm, energies, config.bin_width, edge_exclusion=edge, hbar=config.hbar)
    return c_v, c_w


def run_bandprofile_check(config: RunConfig) -> ExperimentRecord:
    """
    Empirical C(w) of V (slope s0-1) and of W in the adiabatic basis (slope s0-3)
    pooled over the ensemble.
    """
    started = time.perf_counter()
    record = _new_record("bandprofile", config)
    logger.info(f"band profile check at lambda={config.lam:g}, N={config.N}, b={config.b}")
    v_range = (2.0, 0.8 * config.b)
    w_range = (2.0, 0.5 * config.b)

    for i, s0 in enumerate(config.s0_list):
        args = [(config, i, s0, r) for r in range(config.realizations)]
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as executor:
                pairs = list(executor.map(_bandprofile_realization, args))
        else:
            pairs = [_bandprofile_realization(a) for a in args]

        c_v = combine_spectral_samples([p[0] for p in pairs])
        c_w = combine_spectral_samples([p[1] for p in pairs])
        record.spectra[f"V_s0-{s0:g}"] = c_v
        record.spectra[f"W_s0-{s0:g}"] = c_w
        slope_v, _ = fit_spectral_slope(c_v, v_range)
        slope_w, _ = fit_spectral_slope(c_w, w_range)
        record.summary[f"slope_V_s0-{s0:g}"] = slope_v
        record.summary[f"slope_W_s0-{s0:g}"] = slope_w
        logger.info(f"s0={s0:g}: C_V slope {slope_v:.3f} (expect {s0 - 1:.2f}), C_W slope {slope_w:.3f} (expect {s0 - 3:.2f})")
    return _finish(record, started)


def kubo_table(
    config: RunConfig,
    gamma: Optional[float] = None,
    sigma: float = 2.0,
    infrared_cutoff: bool = False,
) -> pd.DataFrame:
    """Kubo oracle values over s0_list x eps_list; gamma defaults to omega0/100."""
    if not config.eps_list:
        raise ValidationError("eps_list must not be empty")
    scales = config.scales
    gamma = scales.omega0 / 100.0 if gamma is None else gamma
    rows: List[Dict[str, float]] = []
    for s0 in config.s0_list:
        for eps in config.eps_list:
            spec = DrivingSpec.from_gamma(eps, sigma, gamma)
            D = kubo_diffusion(s0, spec, scales.omega0, scales.omega_cl, infrared_cutoff=infrared_cutoff)
            rows.append({"s0": s0, "eps": eps, "gamma": gamma, "D_kubo": D, "D_over_eps2": D / eps ** 2})
    return pd.DataFrame(rows, columns=["s0", "eps", "gamma", "D_kubo", "D_over_eps2"])


def run_experiment(kind: str, config: RunConfig) -> ExperimentRecord:
    runners = {
        "fig1": run_fig1,
        "fig2": run_fig2,
        "quench": run_quench_experiment,
        "bandprofile": run_bandprofile_check,
    }
    if kind not in runners:
        raise ValidationError(f"unknown experiment {kind}")
    return runners[kind](config)
