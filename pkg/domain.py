"""
Immutable numeric types shared by the services.

Sites are labelled x = 1..L in every public accessor; arrays are stored
0-based (index x-1). Band offsets follow numpy's ``diag`` convention:
offset k holds entries (i, i+k), so negative offsets are below the diagonal.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np

from exceptions import ParameterError
from utils import TOLERANCES

Gauge = Literal["original", "symmetric", "symmetrized-dissipative"]


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ─────────────────────────────── matrices ───────────────────────────────


@dataclass(frozen=True)
class BandedMatrix:
    size: int
    bands: Dict[int, np.ndarray]
    stochastic: bool = False

    def __post_init__(self):
        if self.size < 1:
            raise ParameterError(f"matrix size must be positive, got {self.size}")
        frozen = {}
        for offset, values in sorted(self.bands.items()):
            offset = int(offset)
            values = _frozen_array(values)
            if abs(offset) >= self.size:
                raise ParameterError(f"band offset {offset} does not fit a {self.size}×{self.size} matrix")
            if values.shape != (self.size - abs(offset),):
                raise ParameterError(
                    f"band {offset} needs {self.size - abs(offset)} coefficients, got {values.shape}"
                )
            if not np.all(np.isfinite(values)):
                raise ParameterError(f"band {offset} holds non-finite coefficients")
            frozen[offset] = values
        object.__setattr__(self, "bands", frozen)
        if self.stochastic:
            sums = self.column_sums()
            if np.any(np.abs(sums - 1.0) > TOLERANCES.stochastic) or self.min_entry() < 0:
                raise ParameterError("matrix flagged stochastic but columns do not sum to 1 with nonnegative entries")

    @property
    def bandwidth(self) -> int:
        return max((abs(k) for k in self.bands), default=0)

    @property
    def is_tridiagonal(self) -> bool:
        return set(self.bands) <= {-1, 0, 1}

    @property
    def is_lower_triangular(self) -> bool:
        return all(k <= 0 for k in self.bands)

    def band(self, offset: int) -> np.ndarray:
        if offset in self.bands:
            return self.bands[offset]
        return np.zeros(self.size - abs(offset))

    def entry(self, row: int, col: int) -> float:
        """Entry at 1-based (row, col)."""
        offset = col - row
        if offset not in self.bands:
            return 0.0
        return float(self.bands[offset][min(row, col) - 1])

    def min_entry(self) -> float:
        return min((float(v.min()) for v in self.bands.values() if v.size), default=0.0)

    def column_sums(self) -> np.ndarray:
        sums = np.zeros(self.size)
        for k, values in self.bands.items():
            if k >= 0:
                sums[k:] += values
            else:
                sums[: self.size + k] += values
        return sums

    def matvec(self, vector: np.ndarray) -> np.ndarray:
        vector = np.asarray(vector, dtype=float)
        if vector.shape[0] != self.size:
            raise ParameterError(f"vector of length {vector.shape[0]} does not match matrix size {self.size}")
        out = np.zeros_like(vector)
        for k, values in self.bands.items():
            if k >= 0:
                out[: self.size - k] += values * vector[k:]
            else:
                out[-k:] += values * vector[: self.size + k]
        return out

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.size, self.size))
        for k, values in self.bands.items():
            dense += np.diag(values, k)
        return dense

    def weighted(self, weight: "DiagonalWeight") -> "BandedMatrix":
        """Row-scaled product P·M for a diagonal weight P."""
        if weight.size != self.size:
            raise ParameterError(f"weight of size {weight.size} does not match matrix size {self.size}")
        w = weight.weights
        bands = {}
        for k, values in self.bands.items():
            bands[k] = values * (w[: self.size - k] if k >= 0 else w[-k:])
        return BandedMatrix(self.size, bands, stochastic=False)


@dataclass(frozen=True)
class SymTridiagonal:
    size: int
    diag: np.ndarray
    offdiag: np.ndarray
    # log of the diagonal map back to the original gauge: v_original = exp(gauge_log) * v
    gauge_log: Optional[np.ndarray] = None
    gauge: Gauge = "symmetric"

    def __post_init__(self):
        diag = _frozen_array(self.diag)
        offdiag = _frozen_array(self.offdiag)
        if diag.shape != (self.size,) or offdiag.shape != (max(self.size - 1, 0),):
            raise ParameterError("symmetric tridiagonal needs L diagonal and L-1 off-diagonal entries")
        if not (np.all(np.isfinite(diag)) and np.all(np.isfinite(offdiag))):
            raise ParameterError("symmetric tridiagonal holds non-finite entries")
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "offdiag", offdiag)
        if self.gauge_log is not None:
            object.__setattr__(self, "gauge_log", _frozen_array(self.gauge_log))

    def matvec(self, vector: np.ndarray) -> np.ndarray:
        vector = np.asarray(vector, dtype=float)
        out = self.diag * vector
        out[:-1] += self.offdiag * vector[1:]
        out[1:] += self.offdiag * vector[:-1]
        return out

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)


@dataclass(frozen=True)
class DiagonalWeight:
    size: int
    log_weights: np.ndarray

    def __post_init__(self):
        logs = _frozen_array(self.log_weights)
        if logs.shape != (self.size,):
            raise ParameterError(f"expected {self.size} log-weights, got {logs.shape}")
        if np.any(np.isnan(logs)) or np.any(logs == np.inf):
            raise ParameterError("log-weights must be finite or -inf")
        object.__setattr__(self, "log_weights", logs)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def weight(self, x: int) -> float:
        return float(np.exp(self.log_weights[x - 1]))

    @property
    def strictly_positive(self) -> bool:
        return bool(np.all(np.isfinite(self.log_weights)))

    def kept_prefix(self) -> Optional[int]:
        """Length ℓ if the weight is 1 on x ≤ ℓ and 0 beyond (a hard truncation)."""
        kept = np.isfinite(self.log_weights)
        ell = int(kept.sum())
        if ell == 0 or not np.all(kept[:ell]) or np.any(kept[ell:]):
            return None
        if not np.allclose(self.log_weights[:ell], 0.0):
            return None
        return ell


@dataclass(frozen=True)
class JumpMoments:
    v_B: float
    D: float
    higher: float


# ─────────────────────────────── spectra ────────────────────────────────


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None  # columns, same order as eigenvalues
    gauge: Gauge = "symmetric"

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _frozen_array(self.eigenvalues))
        if self.eigenvectors is not None:
            object.__setattr__(self, "eigenvectors", _frozen_array(self.eigenvectors))
        if np.any(np.diff(self.eigenvalues) > 0):
            raise ParameterError("spectrum eigenvalues must be sorted in descending order")

    @property
    def leading(self) -> float:
        return float(self.eigenvalues[0])


@dataclass(frozen=True)
class ModeIndex:
    m: int
    L: int

    def __post_init__(self):
        if not (1 <= self.m <= self.L - 1):
            raise ParameterError(f"mode m must satisfy 1 ≤ m ≤ L-1 = {self.L - 1}, got {self.m}")

    @property
    def k(self) -> float:
        return self.m * np.pi / self.L


@dataclass(frozen=True)
class TruncationRoot:
    ell: int
    epsilon: float
    psi: float
    eigenvalue: float
    second_psi: Optional[float] = None


# ─────────────────────────────── autocorrelation ────────────────────────


@dataclass(frozen=True)
class EndpointDensity:
    t: int
    values: np.ndarray
    stderr: Optional[np.ndarray] = None  # Monte Carlo estimates only

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))
        if self.stderr is not None:
            object.__setattr__(self, "stderr", _frozen_array(self.stderr))

    @property
    def total_mass(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class DensitySeries:
    start: int
    checkpoints: List[EndpointDensity]
    return_series: np.ndarray  # ⟨n|M^t|n⟩ for t = 0..T
    mass_series: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "return_series", _frozen_array(self.return_series))
        object.__setattr__(self, "mass_series", _frozen_array(self.mass_series))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    power_exponent: float
    log_prefactor: float
    fit_window: Tuple[int, int]
    residual: float
    exponent_fixed: bool = False


@dataclass(frozen=True)
class PlateauReport:
    plateau_value: float
    t_plateau: float
    t_plateau_full: float
    t_plateau_printed: float
    method: str = "leading-asymptote-intersection"


# ─────────────────────────────── oracles ────────────────────────────────


@dataclass(frozen=True)
class WalkEnsemble:
    n_walkers: int
    positions: np.ndarray
    log_weights: np.ndarray
    rng_seed: int
    t: int
    L: int
    n_workers: int = 1
    start: int = 1

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen_array(self.positions, dtype=np.int64))
        object.__setattr__(self, "log_weights", _frozen_array(self.log_weights))
        if self.positions.shape != (self.n_walkers,) or self.log_weights.shape != (self.n_walkers,):
            raise ParameterError("ensemble arrays must hold one entry per walker")
        if self.positions.size and (self.positions.min() < 1 or self.positions.max() > self.L):
            raise ParameterError("walker positions must lie in [1, L]")


@dataclass(frozen=True)
class OperatorState:
    """
    Heisenberg-evolved operator on n_qubits. ``matrix`` is dense on the first
    ``support`` qubits; the operator acts as the identity on the rest.
    """

    n_qubits: int
    matrix: np.ndarray
    t: int = 0

    def __post_init__(self):
        dim = self.matrix.shape[0]
        if self.matrix.shape != (dim, dim) or dim & (dim - 1) or dim > 2 ** self.n_qubits:
            raise ParameterError(f"operator matrix of shape {self.matrix.shape} does not fit {self.n_qubits} qubits")

    @property
    def support(self) -> int:
        return int(self.matrix.shape[0]).bit_length() - 1

    @property
    def norm(self) -> float:
        """Tr(O†O)/2^n."""
        return float(np.vdot(self.matrix, self.matrix).real / 2 ** self.support)

    def full_matrix(self) -> np.ndarray:
        """The 2ⁿ×2ⁿ matrix, identity padded on qubits beyond the support."""
        return np.kron(self.matrix, np.eye(2 ** (self.n_qubits - self.support)))


@dataclass(frozen=True)
class PauliWeightProfile:
    t: int
    weights: np.ndarray  # ρ_R(x) for x = 1..n
    identity_weight: float
    realizations: int = 1
    stderr: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen_array(self.weights))
        if self.stderr is not None:
            object.__setattr__(self, "stderr", _frozen_array(self.stderr))
