import logging
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import eigh_tridiagonal, eigvalsh_tridiagonal
from scipy.optimize import brentq
from scipy.special import logsumexp

from domain import BandedMatrix, DiagonalWeight, ModeIndex, Spectrum, SymTridiagonal, TruncationRoot
from exceptions import ConvergenceError, ParameterError
from services.matrix_service import MatrixService, hopping
from utils import TOLERANCES, log1mexp, parallel_map, require_probability, require_size

logger = logging.getLogger(__name__)

Operator = Union[SymTridiagonal, BandedMatrix]


def _log_abs_power_minus_one(log_r: float, m: float) -> float:
    """log|r^m - 1| from log r."""
    s = m * log_r
    if s > 0:
        return s + float(log1mexp(s))
    return float(log1mexp(-s))


def _signed_normalize(log_abs: np.ndarray, signs: np.ndarray) -> np.ndarray:
    finite = np.isfinite(log_abs)
    if not np.any(finite):
        raise ConvergenceError("eigenvector vanished identically in the log domain")
    top = log_abs[finite].max()
    values = np.where(finite, signs * np.exp(np.where(finite, log_abs, top) - top), 0.0)
    total = values.sum()
    if total == 0:
        raise ConvergenceError("eigenvector has zero total weight; cannot normalize to unit sum")
    return values / total


class SpectralService:

    # ───────────────────────────── ANALYTIC T(p) ─────────────────────────────

    @staticmethod
    def analytic_spectrum(p: float, L: int) -> Spectrum:
        require_probability(p)
        require_size(L)
        k = np.arange(1, L) * np.pi / L
        values = np.concatenate(([1.0], 2 * p * (1 - p) * (1 + np.cos(k))))
        return Spectrum(np.sort(values)[::-1], gauge="original")

    @staticmethod
    def analytic_eigenvector(
        p: float, mode: ModeIndex, L: int, norm: Literal["exact", "printed"] = "exact"
    ) -> np.ndarray:
        """
        Plane-wave eigenvector of T̃(p), p sin(kx) - (1-p) sin(k(x-1)).

        "exact" divides by the true norm (L/2)(1 - 2p(1-p)(1+cos k)).
        "printed" carries an extra (1-p)² in the norm and is kept for comparison only.
        """
        require_probability(p)
        if mode.L != L:
            raise ParameterError(f"mode was quantized for L={mode.L}, not L={L}")
        k = mode.k
        x = np.arange(1, L + 1, dtype=float)
        psi = p * np.sin(k * x) - (1 - p) * np.sin(k * (x - 1))
        norm2 = (L / 2.0) * (1 - 2 * p * (1 - p) * (1 + np.cos(k)))
        if norm == "printed":
            norm2 *= (1 - p) ** 2
        elif norm != "exact":
            raise ParameterError(f"unknown normalization '{norm}'")
        return psi / np.sqrt(norm2)

    @staticmethod
    def steady_state_overlap(p: float, n: int, L: int) -> float:
        """⟨n|ψ₀⟩⟨ψ₀|n⟩ for the stationary state, evaluated in the log domain."""
        require_probability(p)
        require_size(L, minimum=1)
        if not (1 <= n <= L):
            raise ParameterError(f"site n must satisfy 1 ≤ n ≤ L = {L}, got {n}")
        log_r = float(np.log(p) - np.log1p(-p))
        if log_r == 0.0:
            logger.warning("p = 1/2: steady state is uniform, overlap is 1/L")
            return 1.0 / L
        log_value = (
            2 * (n - 1) * log_r
            + _log_abs_power_minus_one(log_r, 2)
            - _log_abs_power_minus_one(log_r, 2 * L)
        )
        return float(np.exp(log_value))

    # ───────────────────────────── SYMMETRIC TRIDIAGONAL ─────────────────────

    @staticmethod
    def eig_sym_tridiag(m: SymTridiagonal, eigenvectors: bool = False) -> Spectrum:
        """
        All eigenvalues by Sturm-sequence bisection (LAPACK stebz); eigenvectors,
        if requested, by inverse iteration with reorthogonalization (stein).
        """
        tol = TOLERANCES.eigenvalue
        if m.size == 1:
            vectors = np.ones((1, 1)) if eigenvectors else None
            return Spectrum(np.array(m.diag), vectors, gauge=m.gauge)
        try:
            if eigenvectors:
                if m.size > TOLERANCES.full_spectrum_max:
                    raise ParameterError(
                        f"full eigenvector set limited to L ≤ {TOLERANCES.full_spectrum_max}, got {m.size}"
                    )
                values, vectors = eigh_tridiagonal(m.diag, m.offdiag, lapack_driver="stebz", tol=tol)
            else:
                values = eigvalsh_tridiagonal(m.diag, m.offdiag, lapack_driver="stebz", tol=tol)
                vectors = None
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"tridiagonal eigensolver failed for L={m.size}: {exc}")
        order = np.argsort(values)[::-1]
        values = values[order]
        if vectors is not None:
            vectors = vectors[:, order]
            # fix the sign so the largest-magnitude entry is positive
            idx = np.argmax(np.abs(vectors), axis=0)
            vectors = vectors * np.sign(vectors[idx, np.arange(vectors.shape[1])])
        return Spectrum(values, vectors, gauge=m.gauge)

    @staticmethod
    def symmetrize_dissipative(t: SymTridiagonal, w: DiagonalWeight) -> SymTridiagonal:
        """W^{1/2} T̃ W^{1/2}; same spectrum as W·T̃ and W·T."""
        if w.size != t.size:
            raise ParameterError(f"weight of size {w.size} does not match operator size {t.size}")
        if not w.strictly_positive:
            raise ParameterError("zero weights are not invertible; use build_truncated_block for hard truncation")
        half = 0.5 * w.log_weights
        base = t.gauge_log if t.gauge_log is not None else np.zeros(t.size)
        return SymTridiagonal(
            t.size,
            t.diag * np.exp(w.log_weights),
            t.offdiag * np.exp(half[:-1] + half[1:]),
            gauge_log=base + half,
            gauge="symmetrized-dissipative",
        )

    @staticmethod
    def symmetrize_banded(m: BandedMatrix) -> SymTridiagonal:
        """D⁻¹ M D for a tridiagonal M with positive off-diagonal products."""
        if not m.is_tridiagonal:
            raise ParameterError("only tridiagonal matrices can be symmetrized by a diagonal similarity")
        sub, sup = m.band(-1), m.band(1)
        if np.any(sub <= 0) or np.any(sup <= 0):
            raise ParameterError("symmetrization needs strictly positive off-diagonals")
        log_ratio = 0.5 * (np.log(sub) - np.log(sup))
        gauge_log = np.concatenate(([0.0], np.cumsum(log_ratio)))
        return SymTridiagonal(
            m.size,
            np.array(m.band(0)),
            np.sqrt(sub) * np.sqrt(sup),
            gauge_log=gauge_log,
            gauge="symmetrized-dissipative",
        )

    @staticmethod
    def restrict(m: BandedMatrix, ell: int) -> BandedMatrix:
        """Leading ℓ×ℓ block of a banded matrix."""
        bands = {k: v[: ell - abs(k)] for k, v in m.bands.items() if abs(k) < ell}
        return BandedMatrix(ell, bands, stochastic=False)

    # ───────────────────────────── LEADING PAIR ─────────────────────────────

    @staticmethod
    def twisted_vector(m: SymTridiagonal, eigenvalue: float) -> Tuple[np.ndarray, np.ndarray, float]:
        """
        One inverse-iteration step with a twisted factorization of (m - λ).

        Returns log|z|, sign(z) and the residual norm of the unit-norm vector. The
        recurrences run outward from the twist index, so every component keeps
        relative accuracy and tails far below machine epsilon survive the gauge map.
        """
        n = m.size
        if n == 1:
            return np.zeros(1), np.ones(1), abs(m.diag[0] - eigenvalue)
        alpha = m.diag - eigenvalue
        e = m.offdiag
        tiny = np.finfo(float).tiny
        d_plus = np.empty(n)
        d_minus = np.empty(n)
        d_plus[0] = alpha[0]
        for i in range(1, n):
            prev = d_plus[i - 1] if d_plus[i - 1] != 0 else tiny
            d_plus[i] = alpha[i] - e[i - 1] ** 2 / prev
        d_minus[-1] = alpha[-1]
        for i in range(n - 2, -1, -1):
            nxt = d_minus[i + 1] if d_minus[i + 1] != 0 else tiny
            d_minus[i] = alpha[i] - e[i] ** 2 / nxt
        gamma = d_plus + d_minus - alpha
        k = int(np.argmin(np.abs(gamma)))

        log_abs = np.zeros(n)
        signs = np.ones(n)
        with np.errstate(divide="ignore"):
            log_e = np.log(np.abs(e))
            for i in range(k - 1, -1, -1):
                pivot = d_plus[i] if d_plus[i] != 0 else tiny
                log_abs[i] = log_abs[i + 1] + log_e[i] - np.log(abs(pivot))
                signs[i] = -signs[i + 1] * np.sign(e[i]) * np.sign(pivot)
            for i in range(k + 1, n):
                pivot = d_minus[i] if d_minus[i] != 0 else tiny
                log_abs[i] = log_abs[i - 1] + log_e[i - 1] - np.log(abs(pivot))
                signs[i] = -signs[i - 1] * np.sign(e[i - 1]) * np.sign(pivot)
        log_norm = 0.5 * logsumexp(2 * log_abs)
        residual = abs(gamma[k]) * np.exp(-log_norm)
        return log_abs, signs, float(residual)

    @staticmethod
    def leading_pair(
        op: Operator,
        weight: Optional[DiagonalWeight] = None,
        tol: Optional[float] = None,
    ) -> Tuple[float, np.ndarray]:
        """
        Leading eigenvalue and eigenvector of ``weight · op``, the vector mapped
        back to the original (probability-density) gauge and normalized to unit sum.
        """
        tol = tol or TOLERANCES.eigenvalue
        if isinstance(op, SymTridiagonal):
            sym = op if weight is None else SpectralService.symmetrize_dissipative(op, weight)
            return SpectralService._leading_symmetric(sym, tol)

        if not isinstance(op, BandedMatrix):
            raise ParameterError(f"unsupported operator type {type(op).__name__}")
        size = op.size
        if weight is not None:
            if weight.size != size:
                raise ParameterError(f"weight of size {weight.size} does not match operator size {size}")
            if not weight.strictly_positive:
                ell = weight.kept_prefix()
                if ell is None:
                    raise ParameterError("only prefix hard truncations can be restricted to kept sites")
                value, vector = SpectralService.leading_pair(SpectralService.restrict(op, ell), None, tol)
                return value, np.concatenate((vector, np.zeros(size - ell)))
            if SpectralService._symmetrizable(op):
                # stays in the log domain; W·op would underflow once cγx passes ~745
                sym = SpectralService.symmetrize_dissipative(SpectralService.symmetrize_banded(op), weight)
                return SpectralService._leading_symmetric(sym, tol)
            op = op.weighted(weight)

        if SpectralService._symmetrizable(op):
            return SpectralService._leading_symmetric(SpectralService.symmetrize_banded(op), tol)
        if op.is_lower_triangular:
            return SpectralService._leading_triangular(op)
        raise ParameterError("leading_pair supports symmetrizable tridiagonal or lower-triangular operators")

    @staticmethod
    def _symmetrizable(m: BandedMatrix) -> bool:
        return m.is_tridiagonal and bool(np.all(m.band(-1) > 0)) and bool(np.all(m.band(1) > 0))

    @staticmethod
    def _leading_symmetric(sym: SymTridiagonal, tol: float) -> Tuple[float, np.ndarray]:
        n = sym.size
        try:
            if n == 1:
                value = float(sym.diag[0])
            else:
                value = float(
                    eigvalsh_tridiagonal(
                        sym.diag, sym.offdiag, select="i", select_range=(n - 1, n - 1),
                        lapack_driver="stebz", tol=tol,
                    )[0]
                )
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"bisection failed for the leading eigenvalue (L={n}): {exc}")
        log_abs, signs, residual = SpectralService.twisted_vector(sym, value)
        if residual > TOLERANCES.eigenvector_residual:
            raise ConvergenceError(
                f"leading eigenvector residual {residual:.3e} exceeds {TOLERANCES.eigenvector_residual:.1e} "
                f"(λ={value:.15g}, L={n})"
            )
        # the Perron vector has one sign in every gauge
        if np.sum(signs * np.exp(log_abs - log_abs.max())) < 0:
            signs = -signs
        gauge_log = sym.gauge_log if sym.gauge_log is not None else np.zeros(n)
        vector = _signed_normalize(gauge_log + log_abs, signs)
        return value, SpectralService._check_positive(vector, value)

    @staticmethod
    def _leading_triangular(m: BandedMatrix) -> Tuple[float, np.ndarray]:
        """Largest diagonal entry and its eigenvector by forward substitution in the log domain."""
        diag = m.band(0)
        k0 = int(np.argmax(diag))
        value = float(diag[k0])
        if np.count_nonzero(diag == value) > 1:
            raise ConvergenceError(f"leading diagonal value {value} is repeated; eigenvector is not unique")
        n = m.size
        log_abs = np.full(n, -np.inf)
        signs = np.ones(n)
        log_abs[k0] = 0.0
        lower = sorted(k for k in m.bands if k < 0)
        for i in range(k0 + 1, n):
            terms, term_signs = [], []
            for k in lower:
                j = i + k
                if j < k0:
                    continue
                coeff = m.bands[k][j]
                if coeff == 0 or not np.isfinite(log_abs[j]):
                    continue
                terms.append(np.log(abs(coeff)) + log_abs[j])
                term_signs.append(np.sign(coeff) * signs[j])
            if not terms:
                continue
            total, sign = logsumexp(terms, b=term_signs, return_sign=True)
            denom = value - diag[i]
            log_abs[i] = total - np.log(abs(denom))
            signs[i] = sign * np.sign(denom)
        vector = _signed_normalize(log_abs, signs)
        return value, SpectralService._check_positive(vector, value)

    @staticmethod
    def _check_positive(vector: np.ndarray, value: float) -> np.ndarray:
        floor = TOLERANCES.positivity_floor
        if vector.min() < floor:
            raise ConvergenceError(
                f"leading eigenvector (λ={value:.12g}) has entry {vector.min():.3e} below {floor:.0e}"
            )
        if vector.min() < 0:
            logger.warning("⚠ clipping leading-vector entries down to %.3e", vector.min())
        vector = np.clip(vector, 0.0, None)
        return vector / vector.sum()

    @staticmethod
    def sign_changes(vector: np.ndarray, tol: float = 1e-12) -> int:
        """Number of sign flips, ignoring entries below tol·max|v|."""
        vector = np.asarray(vector, dtype=float)
        significant = vector[np.abs(vector) > tol * np.abs(vector).max()]
        return int(np.count_nonzero(np.diff(np.sign(significant)) != 0))

    @staticmethod
    def peak_estimate(eigenvalue: float, gamma: float, c: float = 1.0) -> float:
        """Stationary operator size x* = -ln λ / (cγ)."""
        if not (0 < eigenvalue < 1):
            raise ParameterError(f"leading eigenvalue must lie in (0, 1), got {eigenvalue}")
        if gamma <= 0 or c <= 0:
            raise ParameterError("peak estimate needs gamma > 0 and c > 0")
        return float(-np.log(eigenvalue) / (c * gamma))

    # ───────────────────────────── DISSIPATIVE T(p) ─────────────────────────

    @staticmethod
    def dissipative_operator(p: float, L: int, gamma: float, c: float = 1.0) -> SymTridiagonal:
        t = MatrixService.build_symmetric_transfer(p, L)
        return SpectralService.symmetrize_dissipative(t, MatrixService.build_dissipation(gamma, c, L))

    @staticmethod
    def leading_dissipative(p: float, L: int, gamma: float, c: float = 1.0) -> Tuple[float, np.ndarray]:
        return SpectralService.leading_pair(SpectralService.dissipative_operator(p, L, gamma, c))

    @staticmethod
    def gamma_scan(
        p: float,
        L_list: Sequence[int],
        gamma_grid: Sequence[float],
        c: float = 1.0,
        threads: Optional[int] = None,
    ) -> List[Dict[str, float]]:
        """
        Leading eigenvalue of P(γ)T(p) over an (L, γ) grid, one row per point.
        Rows flag the boundary regime (the state pinned at x=L), where γL is too
        small for the bulk bound e^{-cγ}·4p(1-p) to apply.
        """
        if not L_list or not gamma_grid:
            raise ParameterError("gamma scan needs non-empty L and gamma grids")
        require_probability(p)
        ceiling = 4 * p * (1 - p)
        points = [(int(L), float(g)) for L in L_list for g in gamma_grid]
        logger.info("🔄 γ-scan over %d points (p=%s, c=%s)", len(points), p, c)

        def run(point):
            L, g = point
            sym = SpectralService.dissipative_operator(p, L, g, c)
            value, vector = SpectralService.leading_pair(sym)
            bound = np.exp(-c * g) * ceiling
            return {
                "L": L,
                "gamma": g,
                "leading_eigenvalue": value,
                "bulk_bound": bound,
                "peak_site": int(np.argmax(vector)) + 1,
                "boundary_state": bool(value > bound + 10.0 / L**2),
            }

        return parallel_map(run, points, threads)

    # ───────────────────────────── HARD TRUNCATION ROOTS ─────────────────────

    @staticmethod
    def gtilde(p: float, ell: int, eps: float, form: Literal["exact", "printed"] = "exact") -> float:
        """
        Scaled characteristic function of the c'=0 block at λ = 4p(1-p) - ε.

        "exact" is (b-ε) r cos((ℓ-1)θ+φ) - c cos((ℓ-2)θ+φ), whose zeros are eigenvalues;
        "printed" drops the factor c on the second term and agrees only to leading order.
        """
        require_probability(p)
        a, b, c = hopping(p)
        if not (0 < eps < 2 * b):
            raise ParameterError(f"eps must lie in (0, {2 * b:.6g}) for complex roots; use the real-root branch")
        r = np.sqrt(c / a)
        theta = np.arctan2(np.sqrt((2 * b - eps) * eps), b - eps)
        y_plus = r * np.exp(1j * theta)
        alpha = (b - eps - a - a * np.conj(y_plus)) / (a * (y_plus - np.conj(y_plus)))
        phi = np.angle(alpha)
        second = c if form == "exact" else 1.0
        if form not in ("exact", "printed"):
            raise ParameterError(f"unknown g̃ form '{form}'")
        return float((b - eps) * r * np.cos((ell - 1) * theta + phi) - second * np.cos((ell - 2) * theta + phi))

    @staticmethod
    def gtilde_root(p: float, ell: int, psi_lo: float, psi_hi: float, form: str = "exact") -> float:
        """ψ = εℓ² of the root of g̃ bracketed by [psi_lo, psi_hi]."""
        f = lambda psi: SpectralService.gtilde(p, ell, psi / ell**2, form)
        lo, hi = f(psi_lo), f(psi_hi)
        if np.sign(lo) == np.sign(hi):
            raise ConvergenceError(f"g̃ does not change sign on ψ ∈ [{psi_lo}, {psi_hi}] at ℓ={ell}")
        return float(brentq(f, psi_lo, psi_hi, xtol=TOLERANCES.root, rtol=4 * np.finfo(float).eps))

    @staticmethod
    def gtilde_sign_changes(p: float, ell: int, psi_max: float, samples: int = 4000, form: str = "exact") -> List[float]:
        """Refined ψ of every sign change of g̃ on (0, psi_max]."""
        grid = np.linspace(psi_max / samples, psi_max, samples)
        values = np.array([SpectralService.gtilde(p, ell, psi / ell**2, form) for psi in grid])
        flips = np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0)[0]
        return [SpectralService.gtilde_root(p, ell, grid[i], grid[i + 1], form) for i in flips]

    @staticmethod
    def truncated_root_scan(
        p: float,
        ell_list: Sequence[int],
        c_prime: Optional[float] = 0.0,
        threads: Optional[int] = None,
    ) -> List[TruncationRoot]:
        """
        ψ(ℓ) = (4p(1-p) - λ_max)ℓ² from the numerically computed leading eigenvalue of
        the ℓ×ℓ truncated block. For c'=0 the second root of g̃ is attached as well.
        """
        require_probability(p)
        if p <= 0.5:
            raise ParameterError(f"truncation scan expects p > 1/2, got {p}")
        if any(ell < 8 for ell in ell_list):
            raise ParameterError("truncation scan needs ℓ ≥ 8")
        ceiling = 4 * p * (1 - p)
        c_prime = 0.0 if c_prime is None else c_prime

        def run(ell):
            block = MatrixService.build_truncated_block(p, ell, c_prime)
            value, _ = SpectralService.leading_pair(block)
            eps = ceiling - value
            second = None
            if c_prime == 0.0:
                first = p * (1 - p) * np.pi**2
                roots = SpectralService.gtilde_sign_changes(p, ell, 6 * first)
                second = roots[1] if len(roots) > 1 else None
            return TruncationRoot(ell=int(ell), epsilon=float(eps), psi=float(eps * ell**2), eigenvalue=value, second_psi=second)

        logger.info("🔄 truncation scan p=%s c'=%s over ℓ=%s", p, c_prime, list(ell_list))
        return parallel_map(run, list(ell_list), threads)

    @staticmethod
    def fine_tuned_eigenvalue(p: float, c_prime: float) -> float:
        """
        λ(c') = c/y₊ + c' + b on the real-root branch, solved self-consistently.
        A boundary eigenvalue above 4p(1-p) survives large ℓ only for c' > p(1-p);
        the stochastic corner c'=c gives exactly 1.
        """
        require_probability(p)
        a, b, c = hopping(p)

        def mismatch(lam):
            tl = lam - b
            y_plus = (tl + np.sqrt(max(tl * tl - 4 * a * c, 0.0))) / (2 * a)
            return c / y_plus + c_prime + b - lam

        lo, hi = 2 * b + 1e-12, 1.0 + c_prime + 1.0
        if np.sign(mismatch(lo)) == np.sign(mismatch(hi)):
            raise ConvergenceError(f"no eigenvalue above 4p(1-p) on the fine-tuned line for c'={c_prime}")
        return float(brentq(mismatch, lo, hi, xtol=TOLERANCES.root))

    # ───────────────────────────── SIMPLIFIED MODEL ─────────────────────────

    @staticmethod
    def simplified_eigvec(epsilon: float, gamma: float, L: int, c: float = 1.0) -> np.ndarray:
        """
        Closed-form leading eigenvector of P(γ)T⁽¹⁾ (eigenvalue e^{-cγ}2ε):
        ((1-2ε)/2ε)^{x-1} e^{-cγx(x-1)/2} Π_{y=2..x} (1 - e^{-cγ(y-1)})^{-1}, unit sum.
        """
        if not (0 < epsilon < 0.5):
            raise ParameterError(f"epsilon must lie in (0, 1/2), got {epsilon}")
        if gamma <= 0 or c <= 0:
            raise ParameterError("simplified eigenvector needs gamma > 0 and c > 0")
        require_size(L)
        g = c * gamma
        x = np.arange(1, L + 1, dtype=float)
        log_vals = (x - 1) * (np.log1p(-2 * epsilon) - np.log(2 * epsilon)) - g * x * (x - 1) / 2
        log_prod = np.concatenate(([0.0], np.cumsum(-log1mexp(g * np.arange(1, L, dtype=float)))))
        log_vals = log_vals + log_prod
        return np.exp(log_vals - logsumexp(log_vals))
