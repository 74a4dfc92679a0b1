"""
Random-matrix model: banded realizations with a power-law bandprofile,
the parametric driven Hamiltonian

    H_ij(t) = E_i delta_ij + cos(f(t)) V1_ij + sin(f(t)) V2_ij,   f(t) = fdot * t,

and its frozen counterpart H(0) + fdot * W(0), where W is the adiabatic-basis
coupling i*hbar*V_nm / (E_n - E_m) written back in the site basis.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as la
from scipy import sparse

from .errors import ConfigurationError, DegeneracyError, ValidationError
from .schemas import BandProfile

logger = logging.getLogger(__name__)

_SEED_MOD = 2 ** 64


def derive_seed(master_seed: int, *keys: int) -> int:
    """
    Counter-based seed derivation: the 64-bit state of
    SeedSequence(entropy=master_seed, spawn_key=keys).
    """
    ss = np.random.SeedSequence(entropy=int(master_seed) % _SEED_MOD, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed) % _SEED_MOD))


@dataclass(frozen=True)
class BandedMatrix:
    """
    Real symmetric banded matrix with zero diagonal.
    bands[k, i] holds V[i, i+k] for 1 <= k <= band_max and i < dim-k; all other storage is zero.
    """
    dim: int
    band_max: int
    bands: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.bands.shape != (self.band_max + 1, self.dim):
            raise ValidationError(f"band storage has shape {self.bands.shape}, expected {(self.band_max + 1, self.dim)}")
        if np.any(self.bands[0] != 0):
            raise ValidationError("banded matrix must have a zero diagonal")
        for k in range(1, self.band_max + 1):
            if np.any(self.bands[k, self.dim - k:] != 0):
                raise ValidationError(f"padding of offset {k} must be zero")
        self.bands.setflags(write=False)

    @classmethod
    def from_dense(cls, matrix: np.ndarray, band_max: int) -> "BandedMatrix":
        """Build from a dense symmetric matrix; entries beyond band_max must be zero."""
        matrix = np.asarray(matrix, dtype=float)
        dim = matrix.shape[0]
        if not np.array_equal(matrix, matrix.T):
            raise ValidationError("matrix must be exactly symmetric")
        outside = np.abs(np.subtract.outer(np.arange(dim), np.arange(dim))) > band_max
        if np.any(matrix[outside] != 0):
            raise ValidationError(f"matrix has entries beyond offset {band_max}")
        bands = np.zeros((band_max + 1, dim))
        for k in range(1, band_max + 1):
            bands[k, :dim - k] = np.diagonal(matrix, offset=k)
        return cls(dim=dim, band_max=band_max, bands=bands)

    def offset_values(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.band_max:
            raise ValidationError(f"offset {k} outside 1..{self.band_max}")
        return self.bands[k, :self.dim - k]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.dim, self.dim))
        for k in range(1, self.band_max + 1):
            values = self.offset_values(k)
            idx = np.arange(self.dim - k)
            dense[idx, idx + k] = values
            dense[idx + k, idx] = values
        return dense

    def to_sparse(self) -> sparse.csr_matrix:
        diagonals, offsets = [], []
        for k in range(1, self.band_max + 1):
            values = self.offset_values(k)
            diagonals.extend([values, values])
            offsets.extend([k, -k])
        if not diagonals:
            return sparse.csr_matrix((self.dim, self.dim))
        return sparse.diags(diagonals, offsets, shape=(self.dim, self.dim), format="csr")


def sample_banded_matrix(profile: BandProfile, dim: int, seed: int) -> BandedMatrix:
    """
    Draw one realization: independent Gaussian entries for band_min <= j-i <= band_max
    with variance profile.variance(j-i); offsets count levels of the picket fence.
    """
    if profile.lam <= 0:
        raise ValidationError(f"lambda must be positive, got {profile.lam}")
    if dim <= 2 * profile.band_max:
        raise ConfigurationError(f"dim={dim} too small for band_max={profile.band_max}; need dim > {2 * profile.band_max}")

    rng = _rng(seed)
    bands = np.zeros((profile.band_max + 1, dim))
    for k in range(1, profile.band_max + 1):
        draws = rng.standard_normal(dim - k)
        bands[k, :dim - k] = draws * np.sqrt(profile.variance(k))
    return BandedMatrix(dim=dim, band_max=profile.band_max, bands=bands)


def picket_fence(dim: int, jitter_seed: Optional[int] = None, spacing: float = 1.0) -> np.ndarray:
    """Energies (i - dim//2) * spacing, optionally jittered uniformly by half a spacing."""
    if spacing <= 0:
        raise ValidationError(f"level spacing must be positive, got {spacing}")
    energies = (np.arange(dim, dtype=float) - dim // 2) * spacing
    if jitter_seed is not None:
        energies = energies + _rng(jitter_seed).uniform(-0.5, 0.5, size=dim) * spacing
    return energies


@dataclass(frozen=True)
class DrivenSystem:
    diag: np.ndarray = field(repr=False)
    V1: BandedMatrix = field(repr=False)
    V2: BandedMatrix = field(repr=False)
    fdot: float
    hbar: float = 1.0
    rho: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float)
        if diag.ndim != 1 or diag.size != self.V1.dim or self.V1.dim != self.V2.dim:
            raise ValidationError("diagonal and perturbation matrices must share one dimension")
        if np.any(np.diff(diag) <= 0):
            raise ValidationError("unperturbed energies must be strictly increasing")
        if self.hbar <= 0:
            raise ValidationError("hbar must be positive")
        diag.setflags(write=False)
        object.__setattr__(self, "diag", diag)

    @property
    def dim(self) -> int:
        return self.V1.dim

    @property
    def band_max(self) -> int:
        return max(self.V1.band_max, self.V2.band_max)

    @property
    def eps(self) -> float:
        """RMS driving strength, eps^2 = lam * fdot^2."""
        return float(np.sqrt(self.lam) * abs(self.fdot))

    @cached_property
    def V1_sparse(self) -> sparse.csr_matrix:
        return self.V1.to_sparse()

    @cached_property
    def V2_sparse(self) -> sparse.csr_matrix:
        return self.V2.to_sparse()

    @cached_property
    def V1_dense(self) -> np.ndarray:
        return self.V1.to_dense()

    @cached_property
    def V2_dense(self) -> np.ndarray:
        return self.V2.to_dense()

    def with_rate(self, fdot: float) -> "DrivenSystem":
        return DrivenSystem(diag=self.diag, V1=self.V1, V2=self.V2, fdot=fdot, hbar=self.hbar, rho=self.rho, lam=self.lam)


def make_driven_system(
    profile: BandProfile,
    dim: int,
    fdot: float,
    seed: int,
    hbar: float = 1.0,
    rho: float = 1.0,
    jitter: bool = False,
) -> DrivenSystem:
    """
    Sample V1, V2 (and optional jitter) from independent streams derived from seed.
    The diagonal is a picket fence with spacing 1/rho.
    """
    if rho <= 0:
        raise ValidationError(f"density of states must be positive, got {rho}")
    V1 = sample_banded_matrix(profile, dim, derive_seed(seed, 0))
    V2 = sample_banded_matrix(profile, dim, derive_seed(seed, 1))
    diag = picket_fence(dim, derive_seed(seed, 2) if jitter else None, spacing=1.0 / rho)
    return DrivenSystem(diag=diag, V1=V1, V2=V2, fdot=fdot, hbar=hbar, rho=rho, lam=profile.lam)


def build_hamiltonian(sys: DrivenSystem, t: float) -> np.ndarray:
    """Dense H(t) = diag(E) + cos(fdot t) V1 + sin(fdot t) V2."""
    if t < 0:
        raise ValidationError(f"time must be non-negative, got {t}")
    f = sys.fdot * t
    return np.diag(sys.diag) + np.cos(f) * sys.V1_dense + np.sin(f) * sys.V2_dense


def hamiltonian_sparse(sys: DrivenSystem, t: float) -> sparse.csr_matrix:
    """CSR form of build_hamiltonian, used by the propagator."""
    if t < 0:
        raise ValidationError(f"time must be non-negative, got {t}")
    f = sys.fdot * t
    return (sparse.diags(sys.diag, format="csr") + np.cos(f) * sys.V1_sparse + np.sin(f) * sys.V2_sparse).tocsr()


def check_gaps(energies: np.ndarray, min_gap: float) -> None:
    gaps = np.diff(energies)
    if gaps.size and gaps.min() <= min_gap:
        n = int(np.argmin(gaps))
        raise DegeneracyError((n, n + 1), float(gaps[n]))


def adiabatic_coupling(
    sys: DrivenSystem,
    degeneracy_gap: float = 1e-10,
    gap_floor: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Diagonalize H(0) and return (E_n, basis U, V_nm, W_nm) with V = dH/df at f=0 (i.e. V2)
    and W_nm = i*hbar*V_nm/(E_n - E_m), W_nn = 0.

    With gap_floor > 0, gaps smaller than gap_floor enter the denominator as
    sign(E_n - E_m) * gap_floor, which caps the coupling of near-degenerate pairs.
    """
    if gap_floor < 0:
        raise ValidationError(f"gap_floor must be non-negative, got {gap_floor}")
    h0 = build_hamiltonian(sys, 0.0)
    energies, basis = la.eigh(h0)
    check_gaps(energies, degeneracy_gap)

    v_nm = basis.T @ sys.V2_dense @ basis
    denom = np.subtract.outer(energies, energies)
    if gap_floor > 0:
        denom = np.where(np.abs(denom) < gap_floor, np.where(denom < 0, -gap_floor, gap_floor), denom)
    np.fill_diagonal(denom, 1.0)
    w_nm = 1j * sys.hbar * v_nm / denom
    np.fill_diagonal(w_nm, 0.0)
    return energies, basis, v_nm, w_nm


@dataclass(frozen=True)
class FrozenSystem:
    dim: int
    h_frozen: np.ndarray = field(repr=False)
    h0: np.ndarray = field(repr=False)
    energies: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)

    def hermiticity_defect(self) -> float:
        """max |H - H^dagger| relative to max |H|."""
        scale = np.abs(self.h_frozen).max() or 1.0
        return float(np.abs(self.h_frozen - self.h_frozen.conj().T).max() / scale)


def build_frozen_hamiltonian(sys: DrivenSystem, degeneracy_gap: float = 1e-10, gap_floor: float = 0.0) -> FrozenSystem:
    """
    H(0) + fdot * W(0) in the site basis (the static part U is V1).
    gap_floor is passed to adiabatic_coupling.
    """
    energies, basis, _, w_nm = adiabatic_coupling(sys, degeneracy_gap, gap_floor)
    h0 = build_hamiltonian(sys, 0.0)

    w_ij = basis @ w_nm @ basis.T
    h = h0 + sys.fdot * w_ij
    h = 0.5 * (h + h.conj().T)
    logger.debug(f"Frozen Hamiltonian built: dim={sys.dim}, fdot={sys.fdot}, max|W|={np.abs(w_nm).max():.3e}")
    return FrozenSystem(dim=sys.dim, h_frozen=h, h0=h0, energies=energies, basis=basis)
