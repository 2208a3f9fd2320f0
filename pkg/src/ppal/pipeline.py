"""Data path from raw query stream to a ranked pool of k-anonymous candidates.

The stream is Bernoulli-subsampled occurrence by occurrence, a frequency
sketch decides which sampled queries occur at least ``k`` times, and the
survivors are ranked by the ensemble's prediction variance. Each pool entry
can be released to annotators exactly once.
"""

from __future__ import annotations

import enum
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from scipy import sparse

from ppal.cardinality import HyperLogLog
from ppal.errors import ConfigError, LedgerError
from ppal.frequency import CountMeanMin
from ppal.hashing import hash64
from ppal.workload import Query

if TYPE_CHECKING:
    from ppal.learner import Ensemble, Strategy


class FrequencyScope(str, enum.Enum):
    """Which stream feeds the frequency sketch used by the k-filter."""

    SUBSAMPLE = "subsample"
    FULL = "full"


def subsample(stream: Sequence[Query], beta: float, seed: int) -> list[Query]:
    """Keep each occurrence independently with probability ``beta``, in order.

    One uniform is drawn per occurrence whatever ``beta`` is, so for a fixed
    seed the sample at a smaller rate is a subset of the sample at a larger one.
    """
    if not 0.0 < beta <= 1.0:
        raise ConfigError(f"beta must lie in (0, 1], got {beta}")
    if beta == 1.0:
        return list(stream)
    u = np.random.default_rng(seed).random(len(stream))
    return [q for q, keep in zip(stream, (u < beta).tolist()) if keep]


def expected_pool_size(hll: HyperLogLog, beta: float) -> int:
    """``ceil(beta * n_hat)``, the expected number of distinct sampled queries."""
    # round first so that e.g. 0.1 * 58000 does not ceil to 5801
    return math.ceil(round(beta * hll.estimate(), 9))


@dataclass(frozen=True)
class PoolEntry:
    query: Query
    score: float
    uncertainty: float = 0.0


@dataclass
class RankedExamplePool:
    """Candidates in descending variance order, ties broken by ascending query hash."""

    entries: list[PoolEntry]
    k: int
    beta: float
    _taken: np.ndarray = field(init=False, repr=False)
    _position: dict[str, int] = field(init=False, repr=False)
    _features: sparse.csr_matrix | None = field(init=False, default=None, repr=False)

    def __post_init__(self) -> None:
        self._taken = np.zeros(len(self.entries), dtype=bool)
        self._position = {e.query.text: i for i, e in enumerate(self.entries)}

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def remaining_indices(self) -> np.ndarray:
        return np.flatnonzero(~self._taken)

    def features(self, model: Ensemble) -> sparse.csr_matrix:
        """Feature rows for every entry, computed once."""
        if self._features is None:
            self._features = model.featurize([e.query.text for e in self.entries])
        return self._features

    def take(self, entry: PoolEntry) -> None:
        index = self._position.get(entry.query.text)
        if index is None:
            raise LedgerError(f"entry {entry.query.text!r} is not in this pool")
        self._taken[index] = True


def _pool_order(entry: PoolEntry) -> tuple[float, int]:
    return (-entry.score, entry.query.key)


def build_pool(
    sample: Iterable[Query],
    k: int,
    freq: CountMeanMin,
    model: Ensemble,
    *,
    strategy: Strategy | str = "least_confidence",
    exclude: Iterable[str] = (),
    beta: float = 1.0,
) -> RankedExamplePool:
    """Pool of distinct sampled queries whose estimated frequency is at least ``k``.

    The estimate is the noise-deducted one, which errs low, so a query is only
    admitted when the sketch is confident it is common enough. ``k == 1`` admits
    every sampled query because anything observed occurs at least once.
    Texts in ``exclude`` (held-out and golden queries) never enter the pool.
    """
    from ppal.learner import Strategy, acquisition_scores

    if int(k) != k or k < 1:
        raise ConfigError(f"k must be an integer >= 1, got {k}")
    if model.l < 2:
        raise ConfigError("prediction variance needs at least two members")
    excluded = set(exclude)
    candidates: dict[str, Query] = {}
    for q in sample:
        if q.text not in candidates and q.text not in excluded:
            candidates[q.text] = q
    passed = [q for q in candidates.values() if k <= 1 or freq.estimate(q.text) >= k]
    if not passed:
        return RankedExamplePool([], k=k, beta=beta)

    member_p = model.member_proba(model.featurize([q.text for q in passed]))
    phi = member_p.var(axis=0)
    uncertainty = acquisition_scores(member_p.mean(axis=0), member_p, Strategy(strategy))
    entries = [
        PoolEntry(q, float(s), float(u)) for q, s, u in zip(passed, phi.tolist(), uncertainty.tolist())
    ]
    entries.sort(key=_pool_order)
    return RankedExamplePool(entries, k=k, beta=beta)


@dataclass
class ReleaseLedger:
    """Every query sent to annotators, one record per distinct pool entry."""

    records: list[dict[str, float | int]] = field(default_factory=list)
    _released: set[str] = field(default_factory=set, repr=False)

    def __len__(self) -> int:
        return len(self.records)

    def release_one_of_k(
        self, entry: PoolEntry, *, k: int, beta: float, step: int, pool: RankedExamplePool | None = None
    ) -> Query:
        """Mark one representative occurrence of ``entry`` as released."""
        if entry.query.text in self._released:
            raise LedgerError(f"query {entry.query.text!r} was already released")
        if k < 1:
            raise LedgerError(f"entry must come from a pool with k >= 1, got k={k}")
        self._released.add(entry.query.text)
        if pool is not None:
            pool.take(entry)
        self.records.append(
            {"query_hash": hash64(entry.query.text), "phi": entry.score, "k": k, "beta": beta, "step": step}
        )
        return entry.query

    def write_jsonl(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record) + "\n")
        return path
