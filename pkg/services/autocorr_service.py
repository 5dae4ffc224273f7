import logging
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp
from scipy.stats import binom

from domain import BandedMatrix, DecayFit, DensitySeries, DiagonalWeight, EndpointDensity, PlateauReport
from exceptions import ConvergenceError, ParameterError
from services.spectral_service import SpectralService
from utils import TOLERANCES, require_probability, require_size

logger = logging.getLogger(__name__)

ArrayLike = Union[float, int, Sequence[float], np.ndarray]

# below this binom.pmf is subnormal or zero
_PMF_FLOOR = 1e-290


def _require_above_half(p: float):
    require_probability(p)
    if p <= 0.5:
        raise ParameterError(f"p must exceed 1/2 for the pinned-endpoint formulas, got {p}")


class AutocorrService:

    # ───────────────────────────── EXACT EVOLUTION ─────────────────────────────

    @staticmethod
    def evolve_density(
        m: BandedMatrix,
        start: int,
        steps: int,
        weight: Optional[DiagonalWeight] = None,
        checkpoints: Optional[Iterable[int]] = None,
    ) -> DensitySeries:
        """
        Iterate ρ ← P·(M ρ) from a delta at ``start`` for ``steps`` steps.

        Returns the full density at each checkpoint and the scalar series
        ⟨n|(PM)^t|n⟩ and total mass for t = 0..steps.
        """
        L = m.size
        if int(start) != start or not (1 <= start <= L):
            raise ParameterError(f"start site must satisfy 1 ≤ n ≤ L = {L}, got {start}")
        if int(steps) != steps or steps < 0:
            raise ParameterError(f"steps must be a nonnegative integer, got {steps}")
        if weight is not None and weight.size != L:
            raise ParameterError(f"weight of size {weight.size} does not match matrix size {L}")
        wanted = sorted({int(t) for t in (checkpoints or [])})
        if wanted and (wanted[0] < 0 or wanted[-1] > steps):
            raise ParameterError(f"checkpoints must lie in [0, {steps}]")

        w = weight.weights if weight is not None else None
        rho = np.zeros(L)
        rho[start - 1] = 1.0
        returns = np.empty(steps + 1)
        mass = np.empty(steps + 1)
        snapshots = []
        logger.info("🔄 evolving density on L=%d from n=%d for %d steps", L, start, steps)
        for t in range(steps + 1):
            if t > 0:
                rho = m.matvec(rho)
                if w is not None:
                    rho *= w
            returns[t] = rho[start - 1]
            mass[t] = rho.sum()
            if wanted and t == wanted[0]:
                snapshots.append(EndpointDensity(t, rho))
                wanted.pop(0)

        if m.stochastic and weight is None:
            drift = np.max(np.abs(mass - 1.0))
            if drift > TOLERANCES.stochastic * max(steps, 1):
                raise ConvergenceError(f"stochastic evolution drifted from unit mass by {drift:.3e}")
        return DensitySeries(start=int(start), checkpoints=snapshots, return_series=returns, mass_series=mass)

    # ───────────────────────────── CLOSED FORMS ─────────────────────────────

    @staticmethod
    def spectral_return_sum(p: float, L: int, t: ArrayLike) -> np.ndarray:
        """
        ⟨1|T(p)^t|1⟩ from the plane-wave eigenbasis:
        (2/L) Σ_k λ_k^t p² sin²k / (1 - 2p(1-p)(1+cos k)) plus the steady-state term.
        Exact against direct evolution; no extra normalization constant is needed.
        """
        _require_above_half(p)
        require_size(L)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0):
            raise ParameterError("t must be nonnegative")
        k = np.arange(1, L) * np.pi / L
        log_lam = np.log(2 * p * (1 - p)) + np.log1p(np.cos(k))
        log_amp = np.log(2.0 / L) + 2 * np.log(p) + 2 * np.log(np.sin(k)) - np.log1p(-2 * p * (1 - p) * (1 + np.cos(k)))
        decaying = np.exp(logsumexp(log_amp[None, :] + t[:, None] * log_lam[None, :], axis=1))
        return decaying + SpectralService.steady_state_overlap(p, 1, L)

    @staticmethod
    def asymptotic_return(p: float, t: ArrayLike, L: int) -> np.ndarray:
        """(4p²e/√π)(4p(1-p))^t / (2+t)^{3/2} plus the plateau, powers in the log domain."""
        _require_above_half(p)
        require_size(L)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 1):
            raise ParameterError("the asymptotic form needs t ≥ 1")
        return AutocorrService._asymptote(p, t) + SpectralService.steady_state_overlap(p, 1, L)

    @staticmethod
    def _asymptote(p: float, t):
        log_prefactor = np.log(4 * p * p) + 1.0 - 0.5 * np.log(np.pi)
        return np.exp(log_prefactor + t * np.log(4 * p * (1 - p)) - 1.5 * np.log(2 + t))

    @staticmethod
    def plateau_report(p: float, n: int, L: int) -> PlateauReport:
        """
        Plateau value and onset time. The onset is the root of
        t·ln 4p(1-p) = 2L·ln((1-p)/p); the intersection of the full asymptote with
        the plateau and the closed expression -2L ln p(1-p) / ln 4p(1-p) are kept for comparison.
        """
        _require_above_half(p)
        plateau = SpectralService.steady_state_overlap(p, n, L)
        log_decay = np.log(4 * p * (1 - p))
        log_floor = 2 * L * (np.log1p(-p) - np.log(p))
        upper = 10 * log_floor / log_decay + 10
        t_plateau = brentq(lambda t: t * log_decay - log_floor, 0.0, upper, xtol=1e-12)

        def gap(t):
            return np.log(AutocorrService._asymptote(p, t)) - np.log(plateau)

        if gap(1.0) <= 0:
            t_full = 1.0
        else:
            hi = 2.0
            while gap(hi) > 0:
                hi *= 2
                if hi > 1e9:
                    raise ConvergenceError(f"asymptote never reaches the plateau {plateau:.3e}")
            t_full = brentq(gap, 1.0, hi, xtol=1e-12)
        printed = -2 * L * np.log(p * (1 - p)) / log_decay
        logger.debug("plateau p=%s L=%d: t=%.3f full=%.3f printed=%.3f", p, L, t_plateau, t_full, printed)
        return PlateauReport(
            plateau_value=plateau,
            t_plateau=float(t_plateau),
            t_plateau_full=float(t_full),
            t_plateau_printed=float(printed),
        )

    @staticmethod
    def default_window(p: float, L: int) -> Tuple[int, int]:
        """Fit window [10, 0.7·t_plateau]."""
        t_plateau = AutocorrService.plateau_report(p, 1, L).t_plateau
        hi = int(np.floor(0.7 * t_plateau))
        if hi <= 12:
            raise ParameterError(f"plateau at t≈{t_plateau:.1f} leaves no pre-plateau fit window")
        return 10, hi

    # ───────────────────────────── PRODUCT STATES ─────────────────────────────

    @staticmethod
    def product_state_log_density(q: int, x: ArrayLike, t: int) -> np.ndarray:
        """
        log of q^{2(t+x)} / (1+q²)^{2t} · C(2t, t+x); -inf outside |x| ≤ t.
        This is the binomial law of t+x successes in 2t trials with p = q²/(q²+1).
        """
        AutocorrService._check_product_state(q, t)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p = q * q / (q * q + 1.0)
        k = t + x
        pmf = binom.pmf(k, 2 * t, p)
        with np.errstate(divide="ignore"):
            # logpmf loses digits through gammaln; use it only where pmf underflows
            logs = np.where(pmf > _PMF_FLOOR, np.log(pmf), binom.logpmf(k, 2 * t, p))
        return np.where(np.abs(x) <= t, logs, -np.inf)

    @staticmethod
    def product_state_density(q: int, x: ArrayLike, t: int) -> np.ndarray:
        return np.exp(AutocorrService.product_state_log_density(q, x, t))

    @staticmethod
    def product_state_connected(q: int, t: int) -> float:
        """
        Σ_x ρ̄_R'(x,t) q^{-2x}, summed over the density in the log domain and checked
        against the closed form (4p(1-p))^t.
        """
        AutocorrService._check_product_state(q, t)
        x = np.arange(-t, t + 1, dtype=float)
        terms = AutocorrService.product_state_log_density(q, x, t) - 2 * x * np.log(q)
        value = float(np.exp(logsumexp(terms)))
        p = q * q / (q * q + 1.0)
        closed = (4 * p * (1 - p)) ** t
        if not abs(value - closed) <= 1e-10 * closed:
            raise ConvergenceError(f"product-state sum {value:.15g} departs from (4p(1-p))^t = {closed:.15g}")
        return value

    @staticmethod
    def _check_product_state(q: int, t: int):
        if int(q) != q or q < 2:
            raise ParameterError(f"local dimension q must be an integer ≥ 2, got {q}")
        if int(t) != t or t < 0:
            raise ParameterError(f"t must be a nonnegative integer, got {t}")

    # ───────────────────────────── RATE EXTRACTION ─────────────────────────────

    @staticmethod
    def fit_decay_rate(
        series: Sequence[float],
        window: Tuple[int, int],
        power_exponent: Optional[float] = None,
        times: Optional[Sequence[float]] = None,
    ) -> DecayFit:
        """
        Ordinary least squares on ln ρ(t) = A - ḡ t - β ln(2+t) over the window.
        With power_exponent given, β is held fixed and only A and ḡ are fitted.
        ``series`` is indexed by t = 0, 1, ... unless ``times`` is supplied.
        """
        values = np.asarray(series, dtype=float)
        t_all = np.arange(values.size, dtype=float) if times is None else np.asarray(times, dtype=float)
        if t_all.shape != values.shape:
            raise ParameterError("times and series must have the same length")
        lo, hi = window
        if hi <= lo:
            raise ParameterError(f"fit window ({lo}, {hi}) is empty")
        mask = (t_all >= lo) & (t_all <= hi)
        needed = 2 if power_exponent is not None else 3
        if mask.sum() <= needed:
            raise ParameterError(f"fit window ({lo}, {hi}) holds {int(mask.sum())} points; need more than {needed}")
        t = t_all[mask]
        y = values[mask]
        if np.any(~np.isfinite(y)) or np.any(y <= 0):
            raise ParameterError("series must be strictly positive on the fit window")
        log_y = np.log(y)
        log_poly = np.log(2 + t)
        if power_exponent is None:
            design = np.column_stack([np.ones_like(t), -t, -log_poly])
            target = log_y
        else:
            design = np.column_stack([np.ones_like(t), -t])
            target = log_y + power_exponent * log_poly
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        residual = float(np.sqrt(np.mean((design @ coef - target) ** 2)))
        beta = float(coef[2]) if power_exponent is None else float(power_exponent)
        return DecayFit(
            rate=float(coef[1]),
            power_exponent=beta,
            log_prefactor=float(coef[0]),
            fit_window=(int(lo), int(hi)),
            residual=residual,
            exponent_fixed=power_exponent is not None,
        )
