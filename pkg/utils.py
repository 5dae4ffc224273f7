import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field

from exceptions import ParameterError

load_dotenv()

T = TypeVar("T")
R = TypeVar("R")

# ─── LOGGING ─────────────────────────────────────────────
def setup_logging(level: Optional[str] = None):
    logging.basicConfig(
        level=(level or os.environ.get("OPHYDRO_LOG_LEVEL", "INFO")).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

logger = logging.getLogger("ophydro")

TOOL_VERSION = "1.0.0"


# ─── SETTINGS ────────────────────────────────────────────
class Tolerances(BaseModel):
    """Every numeric tolerance used by the services, in one record."""

    model_config = ConfigDict(frozen=True)

    eigenvalue: float = 1e-13
    eigenvector_residual: float = 1e-9
    stochastic: float = 1e-12
    positivity_floor: float = -1e-10
    root: float = 1e-15
    full_spectrum_max: int = 2000


class Settings(BaseModel):
    model_config = ConfigDict(frozen=True)

    threads: int = Field(default_factory=lambda: os.cpu_count() or 1)
    database_url: str = "sqlite:///ophydro_runs.db"
    log_level: str = "INFO"
    tolerances: Tolerances = Tolerances()


def get_settings() -> Settings:
    threads = os.environ.get("OPHYDRO_THREADS")
    values = {
        "database_url": os.environ.get("OPHYDRO_DB", "sqlite:///ophydro_runs.db"),
        "log_level": os.environ.get("OPHYDRO_LOG_LEVEL", "INFO"),
    }
    if threads:
        n = safe_int(threads, default=0)
        if n < 1:
            raise ParameterError(f"OPHYDRO_THREADS must be a positive integer, got '{threads}'")
        values["threads"] = n
    return Settings(**values)


TOLERANCES = Tolerances()


# ─── PARSERS ─────────────────────────────────────────────
def safe_int(value, default=0) -> int:
    try:
        return int(float(str(value).strip()))
    except (TypeError, ValueError):
        return default


def parse_float_list(value: str) -> List[float]:
    """
    Handles:
      "100,300,500" → [100.0, 300.0, 500.0]
      "1e-3 1e-2"   → [0.001, 0.01]
    """
    if value is None:
        return []
    parts = [s for s in str(value).replace(",", " ").split() if s]
    try:
        return [float(s) for s in parts]
    except ValueError:
        raise ParameterError(f"Could not parse number list '{value}'")


def parse_int_list(value: str) -> List[int]:
    return [int(round(v)) for v in parse_float_list(value)]


# ─── VALIDATION ──────────────────────────────────────────
def require_probability(p: float, name: str = "p"):
    if not (0.0 < p < 1.0) or not np.isfinite(p):
        raise ParameterError(f"{name} must lie in (0, 1), got {p}")


def require_size(L: int, minimum: int = 2, name: str = "L"):
    if int(L) != L or L < minimum:
        raise ParameterError(f"{name} must be an integer ≥ {minimum}, got {L}")


# ─── LOG DOMAIN ──────────────────────────────────────────
def log1mexp(x: np.ndarray) -> np.ndarray:
    """log(1 - e^{-x}) for x > 0, accurate for small and large x."""
    x = np.asarray(x, dtype=float)
    return np.where(x < np.log(2.0), np.log(-np.expm1(-x)), np.log1p(-np.exp(-x)))


# ─── SWEEPS ──────────────────────────────────────────────
def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Map over parameters on a thread pool; results come back in input order."""
    items: Sequence[T] = list(items)
    workers = threads or get_settings().threads
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
