"""
Wavepacket evolution under the driven, frozen and quenched Hamiltonians, and
the energy-space measurements taken along the way.

Time-dependent providers are integrated with a fourth-order commutator-free
exponential scheme (two Krylov-type expm_multiply actions per step); static
providers are propagated exactly through one eigendecomposition.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, List, Literal, Optional, Sequence

import numpy as np
import scipy.linalg as la
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from .ensemble import (
    BandedMatrix,
    DrivenSystem,
    build_frozen_hamiltonian,
    build_hamiltonian,
    check_gaps,
    hamiltonian_sparse,
)
from .errors import EdgeGuardError, IntegrationError, ValidationError
from .schemas import CurveParams, SpreadingCurve

logger = logging.getLogger(__name__)

# Commutator-free fourth-order scheme: nodes c1, c2 and mixing weights a1, a2.
_C1 = 0.5 - math.sqrt(3.0) / 6.0
_C2 = 0.5 + math.sqrt(3.0) / 6.0
_A1 = (3.0 - 2.0 * math.sqrt(3.0)) / 12.0
_A2 = (3.0 + 2.0 * math.sqrt(3.0)) / 12.0


@dataclass(frozen=True)
class WaveState:
    amplitudes: np.ndarray = field(repr=False)
    t: float = 0.0

    @property
    def dim(self) -> int:
        return int(self.amplitudes.size)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @classmethod
    def site(cls, dim: int, index: int, t: float = 0.0) -> "WaveState":
        amplitudes = np.zeros(dim, dtype=complex)
        amplitudes[index] = 1.0
        return cls(amplitudes=amplitudes, t=t)

    @classmethod
    def from_vector(cls, vector, t: float = 0.0) -> "WaveState":
        amplitudes = np.asarray(vector, dtype=complex)
        return cls(amplitudes=amplitudes / np.linalg.norm(amplitudes), t=t)


@dataclass(frozen=True)
class EnergyDistribution:
    energies: np.ndarray = field(repr=False)
    probabilities: np.ndarray = field(repr=False)
    t: float = 0.0

    def __post_init__(self):
        if self.energies.shape != self.probabilities.shape:
            raise ValidationError("energies and probabilities must have equal shape")
        if np.any(self.probabilities < -1e-15):
            raise ValidationError("probabilities must be non-negative")
        total = float(self.probabilities.sum())
        if abs(total - 1.0) > 1e-8:
            raise ValidationError(f"probabilities sum to {total:.12f}, expected 1")

    @property
    def mean(self) -> float:
        return float(np.dot(self.probabilities, self.energies))


@dataclass(frozen=True)
class StaticHamiltonian:
    """Time-independent provider; propagate() evolves it exactly."""
    matrix: np.ndarray = field(repr=False)

    def __call__(self, t: float) -> np.ndarray:
        return self.matrix

    @cached_property
    def spectrum(self):
        dense = self.matrix.toarray() if sparse.issparse(self.matrix) else np.asarray(self.matrix)
        return la.eigh(dense)


HamiltonianProvider = Callable[[float], object]
StateMonitor = Callable[[WaveState], None]


def _check_norm(psi: np.ndarray, t: float, tolerance: float) -> None:
    drift = abs(float(np.linalg.norm(psi)) - 1.0)
    if drift > tolerance:
        raise IntegrationError(t, drift)


def _cf4_step(provider: HamiltonianProvider, psi: np.ndarray, t: float, h: float, hbar: float) -> np.ndarray:
    h1 = provider(t + _C1 * h)
    h2 = provider(t + _C2 * h)
    psi = expm_multiply((-1j * h / hbar) * (_A2 * h1 + _A1 * h2), psi)
    return expm_multiply((-1j * h / hbar) * (_A1 * h1 + _A2 * h2), psi)


def propagate(
    hamiltonian_provider: HamiltonianProvider,
    psi0: WaveState,
    sample_times: Sequence[float],
    norm_tolerance: float = 1e-8,
    max_step: Optional[float] = None,
    hbar: float = 1.0,
    monitor: Optional[StateMonitor] = None,
) -> List[WaveState]:
    """
    Solve i hbar d/dt psi = H(t) psi and return the state at every sample time.
    monitor, if given, is called on each recorded state and may raise to abort.
    """
    times = np.asarray(sample_times, dtype=float)
    if times.size == 0:
        return []
    if np.any(np.diff(times) <= 0):
        raise ValidationError("sample times must be strictly increasing")
    if times[0] < psi0.t:
        raise ValidationError(f"first sample time {times[0]} precedes the initial state at t={psi0.t}")
    if abs(psi0.norm - 1.0) > norm_tolerance:
        raise ValidationError(f"initial state not normalized (norm={psi0.norm:.12f})")

    states: List[WaveState] = []
    static = isinstance(hamiltonian_provider, StaticHamiltonian)
    if static:
        energies, basis = hamiltonian_provider.spectrum
        coeffs = basis.conj().T @ psi0.amplitudes
    elif max_step is None or max_step <= 0:
        raise ValidationError("time-dependent propagation needs a positive max_step")

    psi = np.array(psi0.amplitudes, dtype=complex)
    t = psi0.t
    for t_next in times:
        if static:
            psi = basis @ (np.exp(-1j * energies * (t_next - psi0.t) / hbar) * coeffs)
        elif t_next > t:
            n_steps = max(1, int(math.ceil((t_next - t) / max_step - 1e-9)))
            h = (t_next - t) / n_steps
            for k in range(n_steps):
                psi = _cf4_step(hamiltonian_provider, psi, t + k * h, h, hbar)
        t = float(t_next)
        _check_norm(psi, t, norm_tolerance)
        state = WaveState(amplitudes=psi.copy(), t=t)
        if monitor is not None:
            monitor(state)
        states.append(state)
    return states


def _distribution(energies: np.ndarray, overlaps: np.ndarray, t: float) -> EnergyDistribution:
    probabilities = np.abs(overlaps) ** 2
    return EnergyDistribution(energies=energies, probabilities=probabilities / probabilities.sum(), t=t)


def project_adiabatic(psi: WaveState, H_t) -> EnergyDistribution:
    """P_t(n) = |<n(t)|psi>|^2 on the eigenbasis of H_t."""
    dense = H_t.toarray() if sparse.issparse(H_t) else np.asarray(H_t)
    energies, basis = la.eigh(dense)
    return _distribution(energies, basis.conj().T @ psi.amplitudes, psi.t)


def project_onto(psi: WaveState, energies: np.ndarray, basis: np.ndarray) -> EnergyDistribution:
    """Distribution on a precomputed eigenbasis (columns of basis)."""
    return _distribution(energies, basis.conj().T @ psi.amplitudes, psi.t)


def spreading_variance(dist: EnergyDistribution, reference_energy: Optional[float] = None) -> float:
    """
    Central variance sum P(n) (E_n - Ebar)^2.
    reference_energy only feeds the drift diagnostic in the debug log.
    """
    mean = dist.mean
    variance = float(np.dot(dist.probabilities, (dist.energies - mean) ** 2))
    if reference_energy is not None:
        logger.debug(f"t={dist.t:.4g}: mean energy drift {mean - reference_energy:+.4g}, variance {variance:.4g}")
    return max(variance, 0.0)


def ldos(H0, H_perturbed, n0: int) -> EnergyDistribution:
    """P_inf(E) = sum_nu |<nu|n0>|^2 delta(E - E_nu)."""
    H0 = H0.toarray() if sparse.issparse(H0) else np.asarray(H0)
    H_perturbed = H_perturbed.toarray() if sparse.issparse(H_perturbed) else np.asarray(H_perturbed)
    if not 0 <= n0 < H0.shape[0]:
        raise ValidationError(f"level index {n0} outside 0..{H0.shape[0] - 1}")
    _, basis0 = la.eigh(H0)
    energies, basis = la.eigh(H_perturbed)
    return _distribution(energies, basis.conj().T @ basis0[:, n0], math.inf)


def survival_probability(psi: WaveState, reference: WaveState) -> float:
    return float(abs(np.vdot(reference.amplitudes, psi.amplitudes)) ** 2)


def edge_probability(dist: EnergyDistribution, band: int) -> float:
    """Probability on the band lowest and band highest levels of the distribution."""
    order = np.argsort(dist.energies, kind="stable")
    weights = dist.probabilities[order]
    band = min(band, weights.size // 2)
    return float(weights[:band].sum() + weights[weights.size - band:].sum())


def check_edge(dist: EnergyDistribution, band: int, tolerance: Optional[float], dim: int) -> None:
    if tolerance is None:
        return
    leaked = edge_probability(dist, band)
    if leaked >= tolerance:
        raise EdgeGuardError(dist.t, leaked, dim=dim)


class SpreadingRecorder:
    """
    Monitor that measures every recorded state once: the energy distribution feeds
    the edge guard, Delta E^2 and the survival probability.
    """

    def __init__(
        self,
        measure: Callable[[WaveState], EnergyDistribution],
        psi0: WaveState,
        reference_energy: float,
        band: int,
        edge_tolerance: Optional[float],
    ):
        self.measure = measure
        self.psi0 = psi0
        self.reference_energy = reference_energy
        self.band = band
        self.edge_tolerance = edge_tolerance
        self.variance: List[float] = []
        self.survival: List[float] = []

    def __call__(self, state: WaveState) -> None:
        dist = self.measure(state)
        check_edge(dist, self.band, self.edge_tolerance, state.dim)
        self.variance.append(spreading_variance(dist, self.reference_energy))
        self.survival.append(survival_probability(state, self.psi0))


def sample_time_grid(t_lo: float, t_hi: float, points: int) -> List[float]:
    """t = 0 followed by points-1 log-spaced times on [t_lo, t_hi]."""
    if not 0 < t_lo < t_hi:
        raise ValidationError(f"grid bounds must satisfy 0 < t_lo < t_hi, got ({t_lo}, {t_hi})")
    if points < 2:
        raise ValidationError("a sample grid needs at least 2 points")
    return [0.0] + np.geomspace(t_lo, t_hi, points - 1).tolist()


def default_step(fdot: float, step_fraction: float = 0.05, step_cap: float = 0.02) -> float:
    if fdot == 0:
        return step_cap
    return min(step_fraction / abs(fdot), step_cap)


def curve_params(sys: DrivenSystem, s0: float, sigma: float = 2.0, seeds: Sequence[int] = ()) -> CurveParams:
    return CurveParams(
        s0=s0,
        sigma=sigma,
        fdot=sys.fdot,
        eps=sys.eps,
        dim=sys.dim,
        band_max=sys.band_max,
        lam=sys.lam,
        hbar=sys.hbar,
        seeds=list(seeds),
    )


def _initial_state(basis: np.ndarray, dim: int, initial_state: str) -> WaveState:
    if initial_state == "site":
        return WaveState.site(dim, dim // 2)
    return WaveState.from_vector(basis[:, dim // 2])


def _basis_measure(energies: np.ndarray, basis: Optional[np.ndarray]) -> Callable[[WaveState], EnergyDistribution]:
    """Projection onto a fixed eigenbasis; basis=None means the site basis."""
    if basis is None:
        return lambda state: _distribution(energies, state.amplitudes, state.t)
    return lambda state: project_onto(state, energies, basis)


def _curve(recorder: SpreadingRecorder, sample_times: Sequence[float], mode: str, params: CurveParams) -> SpreadingCurve:
    return SpreadingCurve(
        times=list(map(float, sample_times)),
        variance=recorder.variance,
        mode=mode,
        params=params,
        survival=recorder.survival,
    )


def run_driven(
    sys: DrivenSystem,
    sample_times: Sequence[float],
    *,
    s0: float,
    seed: Optional[int] = None,
    max_step: Optional[float] = None,
    step_fraction: float = 0.05,
    step_cap: float = 0.02,
    norm_tolerance: float = 1e-8,
    edge_tolerance: Optional[float] = 1e-6,
    degeneracy_gap: float = 1e-10,
    measurement_basis: Literal["adiabatic", "unperturbed"] = "adiabatic",
    initial_state: Literal["adiabatic", "site"] = "adiabatic",
) -> SpreadingCurve:
    """
    One realization of the driven Hamiltonian, measured in the instantaneous adiabatic basis.
    The edge guard watches the outermost band_max levels of that same basis.
    """
    h0 = build_hamiltonian(sys, 0.0)
    energies0, basis0 = la.eigh(h0)
    check_gaps(energies0, degeneracy_gap)
    psi0 = _initial_state(basis0, sys.dim, initial_state)

    if measurement_basis == "unperturbed":
        measure = _basis_measure(sys.diag, None)
    else:
        at_zero = _basis_measure(energies0, basis0)

        def measure(state: WaveState) -> EnergyDistribution:
            if state.t == 0.0 or sys.fdot == 0:
                return at_zero(state)
            return project_adiabatic(state, build_hamiltonian(sys, state.t))

    if sys.fdot == 0:
        provider: HamiltonianProvider = StaticHamiltonian(h0)
    else:
        provider = lambda t: hamiltonian_sparse(sys, t)  # noqa: E731
    step = max_step if max_step is not None else default_step(sys.fdot, step_fraction, step_cap)
    recorder = SpreadingRecorder(measure, psi0, float(energies0[sys.dim // 2]), sys.band_max, edge_tolerance)
    propagate(provider, psi0, sample_times, norm_tolerance=norm_tolerance, max_step=step, hbar=sys.hbar, monitor=recorder)
    return _curve(recorder, sample_times, "driven", curve_params(sys, s0, 2.0, [seed] if seed is not None else []))


def run_frozen(
    sys: DrivenSystem,
    sample_times: Sequence[float],
    *,
    s0: float,
    seed: Optional[int] = None,
    norm_tolerance: float = 1e-8,
    edge_tolerance: Optional[float] = 1e-6,
    degeneracy_gap: float = 1e-10,
    gap_floor: float = 0.0,
    measurement_basis: Literal["adiabatic", "unperturbed"] = "adiabatic",
    initial_state: Literal["adiabatic", "site"] = "adiabatic",
) -> SpreadingCurve:
    """One realization of the frozen Hamiltonian H(0) + fdot W(0), measured in the H(0) eigenbasis."""
    frozen = build_frozen_hamiltonian(sys, degeneracy_gap, gap_floor)
    psi0 = _initial_state(frozen.basis, sys.dim, initial_state)
    if measurement_basis == "unperturbed":
        measure = _basis_measure(sys.diag, None)
    else:
        measure = _basis_measure(frozen.energies, frozen.basis)

    recorder = SpreadingRecorder(measure, psi0, float(frozen.energies[sys.dim // 2]), sys.band_max, edge_tolerance)
    propagate(StaticHamiltonian(frozen.h_frozen), psi0, sample_times, norm_tolerance=norm_tolerance, hbar=sys.hbar, monitor=recorder)
    return _curve(recorder, sample_times, "frozen", curve_params(sys, s0, 2.0, [seed] if seed is not None else []))


def run_quench(
    H0,
    V: BandedMatrix,
    eps: float,
    psi0: WaveState,
    sample_times: Sequence[float],
    *,
    s0: float,
    lam: float = 1.0,
    hbar: float = 1.0,
    seed: Optional[int] = None,
    norm_tolerance: float = 1e-8,
    edge_tolerance: Optional[float] = 1e-6,
) -> SpreadingCurve:
    """
    Constant H0 + eps*V from psi0, measured on the H0 eigenbasis.
    The recorded RMS strength is eps*sqrt(lam).
    """
    H0 = H0.toarray() if sparse.issparse(H0) else np.asarray(H0, dtype=float)
    if H0.shape != (V.dim, V.dim):
        raise ValidationError(f"H0 shape {H0.shape} does not match perturbation dimension {V.dim}")
    if eps < 0:
        raise ValidationError(f"eps must be non-negative, got {eps}")

    energies, basis = la.eigh(H0)
    recorder = SpreadingRecorder(
        _basis_measure(energies, basis), psi0, float(energies[V.dim // 2]), V.band_max, edge_tolerance,
    )
    propagate(StaticHamiltonian(H0 + eps * V.to_dense()), psi0, sample_times, norm_tolerance=norm_tolerance, hbar=hbar, monitor=recorder)

    params = CurveParams(
        s0=s0,
        sigma=0.0,
        eps=eps * math.sqrt(lam),
        dim=V.dim,
        band_max=V.band_max,
        lam=lam,
        hbar=hbar,
        seeds=[seed] if seed is not None else [],
    )
    return _curve(recorder, sample_times, "quench", params)


def check_step_convergence(
    sys: DrivenSystem,
    sample_times: Sequence[float],
    max_step: float,
    *,
    s0: float,
    **kwargs,
) -> float:
    """Relative change of the final Delta E^2 when the internal step is halved."""
    coarse = run_driven(sys, sample_times, s0=s0, max_step=max_step, **kwargs)
    fine = run_driven(sys, sample_times, s0=s0, max_step=max_step / 2.0, **kwargs)
    reference = fine.variance[-1]
    if reference == 0:
        return abs(coarse.variance[-1])
    change = abs(coarse.variance[-1] - reference) / abs(reference)
    logger.debug(f"Step-halving check at dt={max_step:.3g}: relative change {change:.3e}")
    return change
