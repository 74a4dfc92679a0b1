import math

import numpy as np
import pytest
import scipy.linalg as la

from qanomaly.dynamics import (
    EnergyDistribution,
    SpreadingRecorder,
    StaticHamiltonian,
    WaveState,
    check_step_convergence,
    edge_probability,
    ldos,
    project_adiabatic,
    project_onto,
    propagate,
    run_driven,
    run_frozen,
    run_quench,
    sample_time_grid,
    spreading_variance,
    survival_probability,
)
from qanomaly.ensemble import build_hamiltonian, make_driven_system
from qanomaly.errors import EdgeGuardError, IntegrationError, ValidationError
from qanomaly.schemas import BandProfile


def _dist(energies, probabilities):
    return EnergyDistribution(energies=np.asarray(energies, dtype=float), probabilities=np.asarray(probabilities, dtype=float))


def test_spreading_variance_examples():
    assert spreading_variance(_dist([-1, 0, 1], [0.5, 0, 0.5])) == pytest.approx(1.0)
    assert spreading_variance(_dist([-1, 0, 1], [0.25, 0.5, 0.25])) == pytest.approx(0.5)
    assert spreading_variance(_dist([-1, 0, 1], [0, 1, 0])) == 0.0
    # the reference energy never changes the central variance
    assert spreading_variance(_dist([-1, 0, 1], [0.5, 0, 0.5]), reference_energy=7.0) == pytest.approx(1.0)


def test_energy_distribution_validation():
    with pytest.raises(ValidationError):
        _dist([0, 1], [0.5, 0.4])
    with pytest.raises(ValidationError):
        _dist([0, 1], [1.5, -0.5])
    with pytest.raises(ValidationError):
        _dist([0, 1, 2], [0.5, 0.5])


def test_eigenstate_is_stationary(small_system):
    h0 = build_hamiltonian(small_system, 0.0)
    energies, basis = la.eigh(h0)
    psi0 = WaveState.from_vector(basis[:, 32])
    states = propagate(StaticHamiltonian(h0), psi0, [0.0, 1.0, 10.0])
    for state in states:
        assert survival_probability(state, psi0) == pytest.approx(1.0, abs=1e-12)
        assert spreading_variance(project_adiabatic(state, h0)) == pytest.approx(0.0, abs=1e-12)


def test_static_evolution_conserves_energy(small_system):
    h0 = build_hamiltonian(small_system, 0.0)
    psi0 = WaveState.site(small_system.dim, 32)
    e0 = np.vdot(psi0.amplitudes, h0 @ psi0.amplitudes).real
    for state in propagate(StaticHamiltonian(h0), psi0, [0.5, 3.0, 20.0]):
        assert np.vdot(state.amplitudes, h0 @ state.amplitudes).real == pytest.approx(e0, abs=1e-10)
        assert state.norm == pytest.approx(1.0, abs=1e-12)


def test_stepper_reproduces_exact_static_evolution(small_system):
    h0 = build_hamiltonian(small_system, 0.0)
    psi0 = WaveState.site(small_system.dim, 32)
    times = [0.1, 0.5, 1.0]
    exact = propagate(StaticHamiltonian(h0), psi0, times)
    stepped = propagate(lambda t: h0, psi0, times, max_step=0.05)
    for a, b in zip(exact, stepped):
        assert np.allclose(a.amplitudes, b.amplitudes, atol=1e-9)


def test_time_dependent_provider_needs_a_step(small_system):
    psi0 = WaveState.site(small_system.dim, 32)
    with pytest.raises(ValidationError):
        propagate(lambda t: build_hamiltonian(small_system, t), psi0, [0.1])


def test_step_halving_changes_little(small_system):
    times = sample_time_grid(0.01, 1.0, 6)
    assert check_step_convergence(small_system, times, 0.02, s0=1.0) < 1e-3


def test_unnormalized_initial_state_is_rejected(small_system):
    h0 = build_hamiltonian(small_system, 0.0)
    psi = WaveState(amplitudes=np.full(small_system.dim, 0.5, dtype=complex))
    with pytest.raises(ValidationError):
        propagate(StaticHamiltonian(h0), psi, [1.0])


def test_norm_drift_is_reported():
    growing = 1j * np.eye(4)
    psi0 = WaveState.site(4, 1)
    with pytest.raises(IntegrationError) as excinfo:
        propagate(lambda t: growing, psi0, [0.5, 1.0], max_step=0.1)
    assert excinfo.value.t == pytest.approx(0.5)


def test_sample_times_must_increase(small_system):
    h0 = build_hamiltonian(small_system, 0.0)
    with pytest.raises(ValidationError):
        propagate(StaticHamiltonian(h0), WaveState.site(small_system.dim, 32), [1.0, 0.5])


def test_adiabatic_projection_of_eigenstate_is_a_point_mass(small_system):
    h = build_hamiltonian(small_system, 0.3)
    energies, basis = la.eigh(h)
    dist = project_adiabatic(WaveState.from_vector(basis[:, 20]), h)
    assert dist.probabilities[20] == pytest.approx(1.0, abs=1e-12)
    assert dist.mean == pytest.approx(energies[20])


def test_undriven_system_stays_put(small_profile):
    sys = make_driven_system(small_profile, dim=64, fdot=0.0, seed=3)
    curve = run_driven(sys, [0.0, 1.0, 5.0, 25.0], s0=1.0)
    assert np.allclose(curve.variance, 0.0, atol=1e-12)
    assert np.allclose(curve.survival, 1.0, atol=1e-12)


def test_driven_curve_starts_from_zero_spread(small_system):
    curve = run_driven(small_system, [0.0, 0.05, 0.1], s0=1.0)
    assert curve.variance[0] == pytest.approx(0.0, abs=1e-12)
    assert curve.variance[1] > 0
    assert curve.params.eps == pytest.approx(small_system.eps)
    assert curve.params.s == pytest.approx(-1.0)


def test_driven_and_frozen_agree_at_short_times(small_system):
    times = np.geomspace(1e-3, 0.02, 5).tolist()
    driven = run_driven(small_system, times, s0=1.0)
    frozen = run_frozen(small_system, times, s0=1.0)
    assert np.allclose(driven.variance, frozen.variance, rtol=0.05)
    # ballistic start: Delta E^2 grows like t^2
    ratio = driven.variance[-1] / driven.variance[0]
    assert ratio == pytest.approx(20.0 ** 2, rel=0.05)


def test_unperturbed_basis_measurement(small_system):
    curve = run_driven(small_system, [0.0, 0.1], s0=1.0, measurement_basis="unperturbed")
    # the H(0) eigenstate already has spread in the site basis
    assert curve.variance[0] > 0


def test_edge_guard_trips_on_edge_state(small_system):
    h0 = build_hamiltonian(small_system, 0.0)
    energies, basis = la.eigh(h0)
    psi0 = WaveState.site(64, 0)
    recorder = SpreadingRecorder(lambda s: project_onto(s, energies, basis), psi0, 0.0, 8, 1e-6)
    with pytest.raises(EdgeGuardError) as excinfo:
        propagate(StaticHamiltonian(h0), psi0, [0.1], monitor=recorder)
    assert excinfo.value.dim == 64


def test_recorder_without_tolerance_only_records(small_system):
    h0 = build_hamiltonian(small_system, 0.0)
    energies, basis = la.eigh(h0)
    psi0 = WaveState.site(64, 0)
    recorder = SpreadingRecorder(lambda s: project_onto(s, energies, basis), psi0, 0.0, 8, None)
    propagate(StaticHamiltonian(h0), psi0, [0.0, 0.1], monitor=recorder)
    assert len(recorder.variance) == 2
    assert recorder.survival[0] == pytest.approx(1.0)


def test_edge_probability():
    assert edge_probability(_dist(np.arange(10), np.full(10, 0.1)), 2) == pytest.approx(0.4)
    assert edge_probability(_dist(np.arange(10), np.eye(10)[5]), 2) == 0.0
    # levels are ranked by energy, not by storage order
    assert edge_probability(_dist([3, 1, 2, 0, 4], [0, 0, 0, 1, 0]), 1) == pytest.approx(1.0)
    assert edge_probability(_dist([3, 1, 2, 0, 4], [0, 0, 1, 0, 0]), 1) == 0.0


def test_edge_guard_counts_levels_for_delocalized_eigenstates():
    # at lam = 1 the H(0) eigenstates spread over many sites; the guard only sees energy levels
    profile = BandProfile(s_lambda=1.0, lam=1.0, band_max=8)
    sys = make_driven_system(profile, dim=64, fdot=0.2, seed=4)
    curve = run_driven(sys, [0.0, 0.02], s0=1.0)
    assert len(curve.variance) == 2
    assert curve.variance[1] < 1.0


def test_ldos_without_perturbation_is_a_point_mass(small_system):
    h0 = np.diag(small_system.diag)
    dist = ldos(h0, h0, 32)
    assert np.max(dist.probabilities) == pytest.approx(1.0)
    assert dist.mean == pytest.approx(small_system.diag[32])
    assert math.isinf(dist.t)


def test_ldos_second_moment_identity(small_system):
    h0 = np.diag(small_system.diag)
    h = build_hamiltonian(small_system, 0.0)
    n0 = 32
    dist = ldos(h0, h, n0)
    column = h[:, n0]
    expected = float(column @ column - h[n0, n0] ** 2)
    assert spreading_variance(dist) == pytest.approx(expected, rel=1e-9)


def test_ldos_rejects_bad_index(small_system):
    h0 = np.diag(small_system.diag)
    with pytest.raises(ValidationError):
        ldos(h0, h0, 64)


def test_quench_without_perturbation_keeps_the_state(small_system):
    h0 = np.diag(small_system.diag)
    curve = run_quench(h0, small_system.V1, 0.0, WaveState.site(64, 32), [0.0, 1.0, 4.0], s0=1.0, lam=0.05)
    assert np.allclose(curve.variance, 0.0, atol=1e-12)
    assert np.allclose(curve.survival, 1.0)
    assert curve.params.sigma == 0.0
    assert curve.params.fdot is None


def test_quench_records_rms_strength(small_system):
    h0 = np.diag(small_system.diag)
    curve = run_quench(h0, small_system.V1, 2.0, WaveState.site(64, 32), [0.0, 0.1], s0=1.0, lam=0.25)
    assert curve.params.eps == pytest.approx(1.0)
    assert curve.params.s == pytest.approx(1.0)
    assert curve.variance[1] > 0


def test_quench_rejects_shape_mismatch(small_system):
    with pytest.raises(ValidationError):
        run_quench(np.eye(10), small_system.V1, 1.0, WaveState.site(10, 5), [0.1], s0=1.0)


def test_sample_time_grid():
    grid = sample_time_grid(0.01, 10.0, 5)
    assert grid[0] == 0.0
    assert grid[1] == pytest.approx(0.01)
    assert grid[-1] == pytest.approx(10.0)
    assert len(grid) == 5
    with pytest.raises(ValidationError):
        sample_time_grid(1.0, 0.5, 5)
    with pytest.raises(ValidationError):
        sample_time_grid(0.1, 1.0, 1)
