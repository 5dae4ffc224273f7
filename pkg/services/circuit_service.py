import logging
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from domain import OperatorState, PauliWeightProfile
from exceptions import ConvergenceError, ParameterError
from services.autocorr_service import AutocorrService
from services.matrix_service import MatrixService
from utils import parallel_map

logger = logging.getLogger(__name__)

MAX_QUBITS = 12
MIN_REALIZATIONS = 50

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _rng(seed) -> Generator:
    return Generator(Philox(seed if isinstance(seed, SeedSequence) else SeedSequence(seed)))


class CircuitService:

    # ───────────────────────────── GATES ─────────────────────────────

    @staticmethod
    def haar_unitary(rng: Generator, dim: int = 4) -> np.ndarray:
        """Haar-random U(dim) from the QR decomposition of a complex Gaussian matrix."""
        z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
        q, r = np.linalg.qr(z)
        phases = np.diag(r) / np.abs(np.diag(r))
        return q * phases

    @staticmethod
    def seed_operator(n_qubits: int, pauli: str = "Z", site: int = 1) -> OperatorState:
        """Single-site Pauli on ``site``, stored on the smallest prefix that contains it."""
        CircuitService._check_qubits(n_qubits)
        if pauli not in ("X", "Y", "Z"):
            raise ParameterError(f"seed must be a nontrivial Pauli, got '{pauli}'")
        if not (1 <= site <= n_qubits):
            raise ParameterError(f"seed site must lie in [1, {n_qubits}], got {site}")
        matrix = np.eye(1, dtype=complex)
        for x in range(1, site + 1):
            matrix = np.kron(matrix, PAULI[pauli] if x == site else PAULI["I"])
        return OperatorState(n_qubits, matrix, t=0)

    @staticmethod
    def _check_qubits(n_qubits: int):
        if int(n_qubits) != n_qubits or n_qubits < 2:
            raise ParameterError(f"need at least 2 qubits, got {n_qubits}")
        if n_qubits > MAX_QUBITS:
            raise ParameterError(f"{n_qubits} qubits exceed the dense limit of {MAX_QUBITS}")

    @staticmethod
    def conjugate(o: OperatorState, u: np.ndarray, first: int) -> OperatorState:
        """U† O U with U on qubits (first, first+1), 0-based. Extends the support if needed."""
        matrix = o.matrix
        support = o.support
        if first >= support:
            return o
        if first + 2 > support:
            matrix = np.kron(matrix, PAULI["I"])
            support += 1
        dim = matrix.shape[0]
        left, right = 2**first, 2 ** (support - first - 2)
        t = matrix.reshape(left, 4, right, dim)
        t = np.einsum("ab,xbyz->xayz", u.conj().T, t)
        t = t.reshape(dim, left, 4, right)
        t = np.einsum("wxby,ba->wxay", t, u)
        return OperatorState(o.n_qubits, t.reshape(dim, dim), o.t)

    @staticmethod
    def layer_pairs(layer: int, n_qubits: int) -> List[int]:
        """Left qubit (0-based) of every gate in a brickwork layer; even layers start at qubit 0."""
        return list(range(layer % 2, n_qubits - 1, 2))

    # ───────────────────────────── EVOLUTION ─────────────────────────────

    @staticmethod
    def iter_realization(n_qubits: int, depth: int, seed, pauli: str = "Z") -> Iterator[OperatorState]:
        """Yield the operator after each layer, starting with the seed at t=0."""
        CircuitService._check_qubits(n_qubits)
        if depth < 0:
            raise ParameterError(f"depth must be nonnegative, got {depth}")
        rng = _rng(seed)
        o = CircuitService.seed_operator(n_qubits, pauli)
        yield o
        for layer in range(depth):
            for first in CircuitService.layer_pairs(layer, n_qubits):
                # gates are drawn for every slot so the stream does not depend on the support
                u = CircuitService.haar_unitary(rng)
                o = CircuitService.conjugate(o, u, first)
            o = OperatorState(n_qubits, o.matrix, layer + 1)
            yield o

    @staticmethod
    def evolve_realization(n_qubits: int, depth: int, seed, pauli: str = "Z") -> List[OperatorState]:
        states = list(CircuitService.iter_realization(n_qubits, depth, seed, pauli))
        drift = abs(states[-1].norm - states[0].norm)
        if drift > 1e-10:
            raise ConvergenceError(f"operator normalization drifted by {drift:.3e} over {depth} layers")
        return states

    # ───────────────────────────── PROFILES ─────────────────────────────

    @staticmethod
    def cumulative_weights(o: OperatorState) -> np.ndarray:
        """W(x) for x = 0..n: weight of strings supported on the first x qubits."""
        n, k = o.n_qubits, o.support
        total = o.norm
        weights = np.full(n + 1, total)
        for x in range(0, k):
            inner, outer = 2**x, 2 ** (k - x)
            t = o.matrix.reshape(inner, outer, inner, outer)
            reduced = np.einsum("aibi->ab", t) / outer
            weights[x] = np.vdot(reduced, reduced).real / inner
        return weights

    @staticmethod
    def endpoint_profile(o: OperatorState) -> PauliWeightProfile:
        """ρ_R(x) = W(x) - W(x-1) for x = 1..n; W(0) is the identity weight."""
        w = CircuitService.cumulative_weights(o)
        rho = np.diff(w)
        total = w[0] + rho.sum()
        if abs(total - o.norm) > 1e-9:
            raise ConvergenceError(f"endpoint weights sum to {total:.12g}, operator norm is {o.norm:.12g}")
        return PauliWeightProfile(t=o.t, weights=rho, identity_weight=float(w[0]))

    @staticmethod
    def realization_profiles(n_qubits: int, depth: int, seed, pauli: str = "Z") -> List[PauliWeightProfile]:
        return [CircuitService.endpoint_profile(o) for o in CircuitService.iter_realization(n_qubits, depth, seed, pauli)]

    @staticmethod
    def average_profiles(runs: List[List[PauliWeightProfile]]) -> List[PauliWeightProfile]:
        """Mean and standard error over realizations, one profile per layer."""
        if not runs:
            raise ParameterError("no realizations to average")
        count = len(runs)
        averaged = []
        for layer in range(len(runs[0])):
            stack = np.array([run[layer].weights for run in runs])
            ident = np.mean([run[layer].identity_weight for run in runs])
            stderr = stack.std(axis=0, ddof=1) / np.sqrt(count) if count > 1 else np.zeros(stack.shape[1])
            averaged.append(
                PauliWeightProfile(runs[0][layer].t, stack.mean(axis=0), float(ident), realizations=count, stderr=stderr)
            )
        return averaged

    @staticmethod
    def run_realizations(
        n_qubits: int, depth: int, realizations: int, seed: int, threads: Optional[int] = None
    ) -> List[PauliWeightProfile]:
        """Average endpoint profiles over independent circuits seeded from one master seed."""
        CircuitService._check_qubits(n_qubits)
        if realizations < 1:
            raise ParameterError(f"realizations must be positive, got {realizations}")
        children = SeedSequence(seed).spawn(realizations)
        logger.info("🔄 %d circuit realizations, n=%d, depth=%d, seed=%d", realizations, n_qubits, depth, seed)
        runs = parallel_map(lambda child: CircuitService.realization_profiles(n_qubits, depth, child), children, threads)
        logger.info("✅ circuit realizations done")
        return CircuitService.average_profiles(runs)

    @staticmethod
    def single_gate_spreading(samples: int, seed: int) -> Tuple[float, float]:
        """Mean and standard error of ρ_R(2) after one Haar gate on Z⊗I."""
        if samples < 2:
            raise ParameterError("need at least two gate samples")
        rng = _rng(seed)
        seed_op = CircuitService.seed_operator(2, "Z")
        values = np.empty(samples)
        for i in range(samples):
            o = CircuitService.conjugate(seed_op, CircuitService.haar_unitary(rng), 0)
            values[i] = CircuitService.endpoint_profile(o).weights[1]
        return float(values.mean()), float(values.std(ddof=1) / np.sqrt(samples))

    # ───────────────────────────── HYDRODYNAMIC COMPARISON ─────────────────────────────

    @staticmethod
    def to_cells(weights: np.ndarray, offset: int = 0) -> np.ndarray:
        """Sum qubit weights into unit cells of two qubits; qubit x lands in cell ceil((x+offset)/2)."""
        if offset not in (0, 1):
            raise ParameterError(f"cell alignment offset must be 0 or 1, got {offset}")
        x = np.arange(1, weights.size + 1)
        cells = (x + offset + 1) // 2
        return np.bincount(cells - 1, weights=weights)

    @staticmethod
    def compare_to_hydro(profiles: List[PauliWeightProfile], p: float = 0.8, offset: int = 0) -> Dict[str, object]:
        """
        Compare averaged profiles at even layers (one hydrodynamic step per two
        layers) with T(p) on the cell lattice. Reports the front position and
        width per step, the total-variation distance, and the fitted front velocity.
        """
        if not profiles:
            raise ParameterError("no profiles to compare")
        if profiles[0].realizations < MIN_REALIZATIONS:
            raise ParameterError(
                f"hydrodynamic comparison needs ≥ {MIN_REALIZATIONS} realizations, got {profiles[0].realizations}"
            )
        even = [prof for prof in profiles if prof.t % 2 == 0]
        cells0 = CircuitService.to_cells(even[0].weights, offset)
        n_cells = cells0.size
        start = int(np.argmax(cells0)) + 1
        steps = even[-1].t // 2
        transfer = MatrixService.build_transfer(p, n_cells) if n_cells >= 2 else None
        if transfer is None:
            raise ParameterError("need at least two unit cells for the comparison")
        exact = AutocorrService.evolve_density(transfer, start, steps, checkpoints=range(steps + 1)).checkpoints
        sites = np.arange(1, n_cells + 1, dtype=float)

        rows = []
        for prof in even:
            step = prof.t // 2
            measured = CircuitService.to_cells(prof.weights, offset)
            measured = measured / measured.sum()
            predicted = exact[step].values
            front, hydro_front = float(sites @ measured), float(sites @ predicted)
            rows.append(
                {
                    "step": step,
                    "layer": prof.t,
                    "front": front,
                    "hydro_front": hydro_front,
                    "width": float(np.sqrt(max(sites**2 @ measured - front**2, 0.0))),
                    "hydro_width": float(np.sqrt(max(sites**2 @ predicted - hydro_front**2, 0.0))),
                    "tv_distance": float(0.5 * np.abs(measured - predicted).sum()),
                }
            )
        steps_arr = np.array([r["step"] for r in rows], dtype=float)
        fronts = np.array([r["front"] for r in rows])
        velocity = float(np.polyfit(steps_arr, fronts, 1)[0]) if len(rows) > 1 else float("nan")
        return {
            "p": p,
            "offset": offset,
            "realizations": profiles[0].realizations,
            "front_velocity": velocity,
            "v_B": p * p - (1 - p) ** 2,
            "rows": rows,
        }
