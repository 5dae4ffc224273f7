import logging
from typing import Optional, Tuple

import numpy as np

from domain import BandedMatrix, DiagonalWeight, JumpMoments, SymTridiagonal
from exceptions import ParameterError
from utils import TOLERANCES, require_probability, require_size

logger = logging.getLogger(__name__)


def hopping(p: float) -> Tuple[float, float, float]:
    """(a, b, c) = ((1-p)², 2p(1-p), p²): left, stay and right probabilities."""
    return (1.0 - p) ** 2, 2.0 * p * (1.0 - p), p * p


class MatrixService:

    # ───────────────────────────── TRANSFER MATRICES ─────────────────────────────

    @staticmethod
    def build_transfer(p: float, L: int) -> BandedMatrix:
        """
        Stochastic tridiagonal T(p) for the right-endpoint walk.
        Column x sends weight p² to x+1, 2p(1-p) to x and (1-p)² to x-1;
        the corners absorb the missing moves so every column sums to 1.
        """
        require_probability(p)
        require_size(L)
        a, b, c = hopping(p)
        diag = np.full(L, b)
        diag[0] = 1.0 - c
        diag[-1] = b + c
        return BandedMatrix(
            L,
            {-1: np.full(L - 1, c), 0: diag, 1: np.full(L - 1, a)},
            stochastic=True,
        )

    @staticmethod
    def build_symmetric_transfer(p: float, L: int) -> SymTridiagonal:
        require_probability(p)
        require_size(L)
        a, b, c = hopping(p)
        diag = np.full(L, b)
        diag[0] = a + b
        diag[-1] = b + c
        similarity = MatrixService.build_similarity(p, L)
        return SymTridiagonal(
            L,
            diag,
            np.full(L - 1, p * (1.0 - p)),
            gauge_log=similarity.log_weights,
            gauge="symmetric",
        )

    @staticmethod
    def build_similarity(p: float, L: int) -> DiagonalWeight:
        """R = diag((p/(1-p))^{n-1}), kept in the log domain."""
        require_probability(p)
        require_size(L, minimum=1)
        step = np.log(p) - np.log1p(-p)
        return DiagonalWeight(L, step * np.arange(L, dtype=float))

    # ───────────────────────────── DIAGONAL DEFORMATIONS ─────────────────────────

    @staticmethod
    def build_dissipation(gamma: float, c: float, L: int) -> DiagonalWeight:
        if not np.isfinite(gamma) or gamma < 0:
            raise ParameterError(f"dissipation rate gamma must be ≥ 0, got {gamma}")
        if not np.isfinite(c) or c <= 0:
            raise ParameterError(f"channel constant c must be > 0, got {c}")
        require_size(L, minimum=1)
        return DiagonalWeight(L, -c * gamma * np.arange(1, L + 1, dtype=float))

    @staticmethod
    def build_hard_truncation(ell: int, L: int) -> DiagonalWeight:
        # site ℓ itself is kept
        require_size(L, minimum=1)
        if int(ell) != ell or not (1 <= ell <= L):
            raise ParameterError(f"cutoff ell must satisfy 1 ≤ ell ≤ L = {L}, got {ell}")
        logs = np.zeros(L)
        logs[int(ell):] = -np.inf
        return DiagonalWeight(L, logs)

    # ───────────────────────────── TRUNCATED AND MODEL MATRICES ──────────────────

    @staticmethod
    def build_truncated_block(
        p: float,
        ell: int,
        c_prime: float,
        coefficients: Optional[Tuple[float, float, float]] = None,
    ) -> BandedMatrix:
        """
        ℓ×ℓ block with hopping (a, b, c) and boundary coefficient c' in the last corner.
        c' = c reproduces T(p) on ℓ sites; c' = 0 is the kept block of P(ℓ)T(p).
        Generic (a, b, c) may be passed to study other stochastic walks.
        """
        require_probability(p)
        require_size(ell)
        a, b, c = coefficients if coefficients is not None else hopping(p)
        if min(a, b, c) < 0:
            raise ParameterError(f"hopping coefficients must be nonnegative, got {(a, b, c)}")
        if not np.isfinite(c_prime) or c_prime < 0:
            raise ParameterError(f"boundary coefficient c_prime must be ≥ 0, got {c_prime}")
        diag = np.full(ell, b)
        diag[0] = a + b
        diag[-1] = b + c_prime
        stochastic = abs(c_prime - c) <= TOLERANCES.stochastic and abs(a + b + c - 1.0) <= TOLERANCES.stochastic
        return BandedMatrix(
            ell,
            {-1: np.full(ell - 1, c), 0: diag, 1: np.full(ell - 1, a)},
            stochastic=stochastic,
        )

    @staticmethod
    def counterexample_window(p: float) -> float:
        return min(p / 6.0, (1.0 - p / 2.0) / 3.0)

    @staticmethod
    def build_counterexample(p: float, epsilon: float, L: int, pinned_second_last: bool = False) -> BandedMatrix:
        """
        Lower-triangular T(p, ε): a walk with identical v_B and D for every ε.
        Bands are truncated at the boundary, so the last three columns are sub-stochastic.

        With pinned_second_last the (L-1, L-1) entry is 1-p and the rest of that
        column is re-completed to stochastic, which makes 1-p the second-largest
        eigenvalue without changing the dissipative limit.
        """
        require_probability(p)
        require_size(L, minimum=4)
        upper = MatrixService.counterexample_window(p)
        if not np.isfinite(epsilon) or epsilon < 0 or epsilon > upper + 1e-12:
            raise ParameterError(f"epsilon must satisfy 0 ≤ ε ≤ {upper:.6g} for p={p}, got {epsilon}")
        diag = np.full(L, 1.0 - p - epsilon)
        first = np.full(L - 1, p / 2 + 3 * epsilon)
        second = np.full(L - 2, max(p / 2 - 3 * epsilon, 0.0))
        third = np.full(L - 3, epsilon)
        if pinned_second_last:
            # column L-1 only reaches row L, so it carries the rest of the mass
            diag[L - 2] = 1.0 - p
            first[L - 2] = p
        return BandedMatrix(L, {0: diag, -1: first, -2: second, -3: third}, stochastic=False)

    @staticmethod
    def build_simplified(epsilon: float, L: int) -> BandedMatrix:
        """T⁽¹⁾: T(p) at p = 1-ε to first order, an absorbing last site."""
        if not np.isfinite(epsilon) or not (0.0 < epsilon < 0.5):
            raise ParameterError(f"epsilon must lie in (0, 1/2), got {epsilon}")
        require_size(L)
        diag = np.full(L, 2.0 * epsilon)
        diag[-1] = 1.0
        return BandedMatrix(L, {0: diag, -1: np.full(L - 1, 1.0 - 2.0 * epsilon)}, stochastic=True)

    # ───────────────────────────── MOMENTS ─────────────────────────────

    @staticmethod
    def bulk_column(m: BandedMatrix) -> Tuple[np.ndarray, np.ndarray]:
        """Jumps (row - col) and their probabilities in a column far from both edges."""
        width = m.bandwidth
        if m.size <= 2 * width:
            raise ParameterError(f"matrix of size {m.size} has no bulk column for bandwidth {width}")
        col = m.size // 2 + 1
        jumps = np.arange(-width, width + 1)
        probs = np.array([m.entry(col + j, col) for j in jumps])
        return jumps, probs

    @staticmethod
    def jump_moments(m: BandedMatrix) -> JumpMoments:
        """
        Kramers-Moyal coefficients of the bulk jump distribution:
        v_B = E[m], D = E[m²]/2, higher = E[m³]/6.
        Only the bulk column has to be stochastic; truncated edge columns are allowed.
        """
        jumps, probs = MatrixService.bulk_column(m)
        if abs(probs.sum() - 1.0) > TOLERANCES.stochastic or probs.min() < 0:
            raise ParameterError("jump moments need a stochastic bulk column")
        return JumpMoments(
            v_B=float(np.dot(jumps, probs)),
            D=float(np.dot(jumps.astype(float) ** 2, probs) / 2.0),
            higher=float(np.dot(jumps.astype(float) ** 3, probs) / 6.0),
        )
