import logging
from typing import List, Optional, Tuple

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from scipy.stats import chisquare

from domain import EndpointDensity, WalkEnsemble
from exceptions import ParameterError
from utils import parallel_map, require_probability, require_size

logger = logging.getLogger(__name__)


def _worker_rng(seed: int, worker: int, t: int) -> Generator:
    # counter-based stream keyed by (seed, worker, step); independent of call order
    return Generator(Philox(SeedSequence([int(seed), int(worker), int(t)])))


class WalkService:

    @staticmethod
    def new_ensemble(n_walkers: int, L: int, start: int = 1, seed: int = 0, n_workers: int = 1) -> WalkEnsemble:
        require_size(L, minimum=1)
        if n_walkers < 1:
            raise ParameterError(f"n_walkers must be positive, got {n_walkers}")
        if not (1 <= start <= L):
            raise ParameterError(f"start site must satisfy 1 ≤ n ≤ L = {L}, got {start}")
        if n_workers < 1:
            raise ParameterError(f"n_workers must be positive, got {n_workers}")
        return WalkEnsemble(
            n_walkers=int(n_walkers),
            positions=np.full(n_walkers, start, dtype=np.int64),
            log_weights=np.zeros(n_walkers),
            rng_seed=int(seed),
            t=0,
            L=int(L),
            n_workers=int(n_workers),
            start=int(start),
        )

    @staticmethod
    def _chunks(n_walkers: int, n_workers: int) -> List[Tuple[int, int]]:
        edges = np.linspace(0, n_walkers, n_workers + 1).astype(int)
        return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    @staticmethod
    def step_ensemble(e: WalkEnsemble, p: float, gamma: float, L: int, c: float = 1.0) -> WalkEnsemble:
        """
        One step of the endpoint walk: +1 w.p. p², -1 w.p. (1-p)², stay otherwise.
        Moves off the lattice are rejected, which reproduces the corner columns of
        T(p) exactly. Dissipation subtracts cγx from the log-weight at the new site.
        """
        require_probability(p)
        if L != e.L:
            raise ParameterError(f"ensemble lives on L={e.L}, not L={L}")
        if gamma < 0 or c <= 0:
            raise ParameterError("need gamma ≥ 0 and c > 0")
        right, left = p * p, (1 - p) ** 2
        t_next = e.t + 1

        def move(chunk):
            worker, (lo, hi) = chunk
            u = _worker_rng(e.rng_seed, worker, t_next).random(hi - lo)
            jump = np.where(u < right, 1, np.where(u < right + left, -1, 0))
            return np.clip(e.positions[lo:hi] + jump, 1, L)

        parts = parallel_map(move, enumerate(WalkService._chunks(e.n_walkers, e.n_workers)), e.n_workers)
        positions = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
        log_weights = e.log_weights - c * gamma * positions if gamma > 0 else np.array(e.log_weights)
        return WalkEnsemble(
            n_walkers=e.n_walkers,
            positions=positions,
            log_weights=log_weights,
            rng_seed=e.rng_seed,
            t=t_next,
            L=e.L,
            n_workers=e.n_workers,
            start=e.start,
        )

    @staticmethod
    def run(
        e: WalkEnsemble, p: float, gamma: float, steps: int, c: float = 1.0, checkpoints: Optional[List[int]] = None
    ) -> Tuple[WalkEnsemble, List[EndpointDensity], np.ndarray]:
        """Advance ``steps`` steps; returns the final ensemble, checkpoint densities and the mass series."""
        wanted = set(checkpoints or [])
        snapshots = []
        mass = np.empty(steps + 1)
        mass[0] = WalkService.ensemble_density(e).total_mass
        if e.t in wanted:
            snapshots.append(WalkService.ensemble_density(e))
        logger.info("🔄 walking %d walkers for %d steps (p=%s, γ=%s, workers=%d)", e.n_walkers, steps, p, gamma, e.n_workers)
        for i in range(1, steps + 1):
            e = WalkService.step_ensemble(e, p, gamma, e.L, c)
            density = WalkService.ensemble_density(e)
            mass[i] = density.total_mass
            if e.t in wanted:
                snapshots.append(density)
        return e, snapshots, mass

    @staticmethod
    def ensemble_density(e: WalkEnsemble) -> EndpointDensity:
        """Weight histogram over x=1..L divided by n_walkers, with per-bin standard errors."""
        w = np.exp(e.log_weights)
        idx = e.positions - 1
        first = np.bincount(idx, weights=w, minlength=e.L) / e.n_walkers
        second = np.bincount(idx, weights=w * w, minlength=e.L) / e.n_walkers
        var = np.clip(second - first**2, 0.0, None)
        return EndpointDensity(e.t, first, np.sqrt(var / e.n_walkers))

    @staticmethod
    def mean_position(e: WalkEnsemble) -> float:
        w = np.exp(e.log_weights)
        return float(np.average(e.positions, weights=w))

    @staticmethod
    def chi_square(e: WalkEnsemble, exact: EndpointDensity, min_expected: float = 5.0) -> Tuple[float, float]:
        """
        Pearson χ² of the unweighted histogram against an exact density.
        Bins with fewer than ``min_expected`` expected walkers are pooled into one.
        """
        if np.any(e.log_weights != 0):
            raise ParameterError("χ² comparison needs an unweighted (γ=0) ensemble")
        if exact.values.size != e.L:
            raise ParameterError(f"exact density of size {exact.values.size} does not match L={e.L}")
        observed = np.bincount(e.positions - 1, minlength=e.L).astype(float)
        expected = exact.values / exact.values.sum() * e.n_walkers
        keep = expected >= min_expected
        obs = list(observed[keep])
        exp = list(expected[keep])
        if expected[~keep].sum() > 0:
            obs.append(observed[~keep].sum())
            exp.append(expected[~keep].sum())
        if len(obs) < 2:
            raise ParameterError("χ² comparison needs at least two populated bins")
        result = chisquare(obs, exp)
        return float(result.statistic), float(result.pvalue)
