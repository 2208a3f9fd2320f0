"""(epsilon, delta) accounting for sampling followed by k-anonymization.

Releasing only queries that occur at least ``k`` times in a Bernoulli(beta)
subsample is differentially private. With
``gamma = (e**eps - 1 + beta) / e**eps`` the failure probability is the worst
binomial tail over the number ``n`` of records sharing a query::

    delta = max_{n >= ceil(k / gamma) - 1} P[Binomial(n, beta) > ceil(gamma * n)]

Subsampling further at rate ``beta2 / beta1`` amplifies an existing guarantee
(see :func:`amplify`).
"""

from __future__ import annotations

import csv
import itertools
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import stats

from ppal.errors import ConfigError, DomainError

DEFAULT_N_MAX = 10**6
# delta values below this are reported as exactly zero
DELTA_FLOOR = 1e-300
_LOG_FLOOR = math.log(DELTA_FLOOR)
_SCAN_CHUNK = 4096
_EXACT_CANDIDATES = 8

GRID_EPSILONS = (0.25, 0.5, 0.75, 1.0)
GRID_DELTAS = (1e-6, 1e-9, 1e-12, 1e-15)
GRID_BETAS = (0.1, 0.3, 0.6, 0.9)
GRID_KS = (20, 100, 200, 500)

GRID_COLUMNS = ("epsilon", "delta", "beta", "k", "satisfied", "accuracy")


@dataclass(frozen=True)
class PrivacyParams:
    beta: float
    k: int
    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"k must be an integer >= 1, got {self.k}")
        if not self.epsilon >= 0.0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError(f"delta must lie in [0, 1), got {self.delta}")


@dataclass
class GuaranteeCell:
    params: PrivacyParams
    satisfied: bool
    accuracy: float | None = None


def privacy_loss(p_d: float, p_dprime: float) -> float:
    """Log-ratio of the probabilities of one output under adjacent datasets."""
    if not (p_d > 0.0 and p_dprime > 0.0):
        raise DomainError(f"probabilities must be positive, got {p_d} and {p_dprime}")
    return math.log(p_d) - math.log(p_dprime)


def amplify(epsilon1: float, delta1: float, beta1: float, beta2: float) -> tuple[float, float]:
    """Guarantee at sampling rate ``beta2`` of a mechanism that is
    ``(epsilon1, delta1)``-private at sampling rate ``beta1 >= beta2``."""
    if not 0.0 < beta2 <= beta1 <= 1.0:
        raise DomainError(f"need 0 < beta2 <= beta1 <= 1, got beta1={beta1}, beta2={beta2}")
    if epsilon1 < 0.0 or not 0.0 <= delta1 < 1.0:
        raise DomainError(f"invalid base guarantee ({epsilon1}, {delta1})")
    if beta2 == beta1:
        return epsilon1, delta1
    ratio = beta2 / beta1
    return math.log1p(ratio * math.expm1(epsilon1)), ratio * delta1


def deamplify(epsilon2: float, delta2: float, beta: float) -> tuple[float, float]:
    """Inverse of ``amplify(., ., 1, beta)``: the unsampled guarantee that
    subsampling at rate ``beta`` turns into ``(epsilon2, delta2)``."""
    if not 0.0 < beta <= 1.0:
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    if beta == 1.0:
        return epsilon2, delta2
    return math.log1p(math.expm1(epsilon2) / beta), delta2 / beta


def sampling_gamma(beta: float, epsilon: float) -> float:
    return 1.0 - (1.0 - beta) * math.exp(-epsilon)


def _chernoff_log_bound(gamma: float, beta: float) -> float:
    """Per-record exponent ``-KL(gamma || beta)`` of the upper tail."""
    if gamma <= beta:
        return 0.0
    kl = gamma * math.log(gamma / beta) + (1.0 - gamma) * math.log((1.0 - gamma) / (1.0 - beta))
    return -kl


def _log_tail_exact(n: int, threshold: int, beta: float) -> float:
    """log P[Binomial(n, beta) > threshold] by compensated summation of the pmf."""
    if threshold >= n:
        return -math.inf
    j = np.arange(threshold + 1, n + 1)
    log_pmf = stats.binom.logpmf(j, n, beta)
    top = float(log_pmf.max())
    if top == -math.inf:
        return -math.inf
    return top + math.log(math.fsum(np.exp(log_pmf - top)))


@lru_cache(maxsize=4096)
def _log_base_delta(k: int, beta: float, epsilon: float, n_max: int) -> float:
    gamma = sampling_gamma(beta, epsilon)
    n_lo = max(math.ceil(k / gamma) - 1, 1)
    if n_lo > n_max:
        return -math.inf
    rate = _chernoff_log_bound(gamma, beta)

    # Locate the maximising n with the library tail, then sum exactly there.
    best = -math.inf
    candidates: list[tuple[float, int]] = []
    start = n_lo
    while start <= n_max:
        if rate < 0.0 and start * rate < max(best, _LOG_FLOOR) - 1.0:
            break  # Chernoff: no n >= start can beat the current maximum
        n = np.arange(start, min(start + _SCAN_CHUNK, n_max + 1))
        log_tail = stats.binom.logsf(np.ceil(gamma * n), n, beta)
        best = max(best, float(log_tail.max()))
        keep = log_tail >= best - 1e-6
        candidates.extend(zip(log_tail[keep].tolist(), n[keep].tolist()))
        start += _SCAN_CHUNK
    if best == -math.inf:
        return -math.inf
    near = sorted((c for c in candidates if c[0] >= best - 1e-6), reverse=True)
    return max(_log_tail_exact(n, math.ceil(gamma * n), beta) for _, n in near[:_EXACT_CANDIDATES])


def base_delta_for_k(k: int, beta: float, epsilon: float, n_max: int = DEFAULT_N_MAX) -> float:
    """delta for releasing queries with frequency >= ``k`` in a Bernoulli(``beta``) sample.

    Scans ``n`` from ``ceil(k / gamma) - 1`` up to ``n_max`` (stopping early
    once a Chernoff bound shows the remaining tails are smaller). Without
    sampling (``beta == 1``) nothing is guaranteed and 1 is returned.
    """
    if int(k) != k or k < 1:
        raise DomainError(f"k must be an integer >= 1, got {k}")
    if not 0.0 < beta <= 1.0:
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    if not epsilon >= 0.0:
        raise DomainError(f"epsilon must be >= 0, got {epsilon}")
    if beta == 1.0:
        return 1.0
    if n_max < k:
        raise DomainError(f"n_max must be >= k, got n_max={n_max}, k={k}")
    log_delta = _log_base_delta(int(k), float(beta), float(epsilon), int(n_max))
    if log_delta < _LOG_FLOOR:
        return 0.0
    return min(1.0, math.exp(log_delta))


def satisfies(params: PrivacyParams, n_max: int = DEFAULT_N_MAX) -> bool:
    return base_delta_for_k(params.k, params.beta, params.epsilon, n_max) <= params.delta


def grid(
    betas: Sequence[float],
    ks: Sequence[int],
    epsilons: Sequence[float],
    deltas: Sequence[float],
    n_max: int = DEFAULT_N_MAX,
) -> list[GuaranteeCell]:
    """One cell per (epsilon, delta, beta, k), epsilon outermost."""
    for name, values in (("betas", betas), ("ks", ks), ("epsilons", epsilons), ("deltas", deltas)):
        if len(values) == 0:
            raise ConfigError(f"{name} must not be empty")
    cells = []
    for epsilon, delta, beta, k in itertools.product(epsilons, deltas, betas, ks):
        params = PrivacyParams(beta=beta, k=k, epsilon=epsilon, delta=delta)
        cells.append(GuaranteeCell(params, satisfies(params, n_max)))
    return cells


def standard_grid(n_max: int = DEFAULT_N_MAX) -> list[GuaranteeCell]:
    return grid(GRID_BETAS, GRID_KS, GRID_EPSILONS, GRID_DELTAS, n_max)


def grid_rows(cells: Iterable[GuaranteeCell]) -> list[dict[str, str]]:
    rows = []
    for cell in cells:
        p = cell.params
        rows.append(
            {
                "epsilon": repr(p.epsilon),
                "delta": repr(p.delta),
                "beta": repr(p.beta),
                "k": str(p.k),
                "satisfied": "true" if cell.satisfied else "false",
                "accuracy": "" if cell.accuracy is None else f"{cell.accuracy:.4f}",
            }
        )
    return rows


def write_grid_csv(cells: Iterable[GuaranteeCell], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=GRID_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(grid_rows(cells))
    return path
