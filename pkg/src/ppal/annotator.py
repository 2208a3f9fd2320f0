"""Simulated crowd annotator with a per-call accuracy draw and a budget ledger."""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ppal.errors import ConfigError
from ppal.hashing import derive_seed, hash64
from ppal.workload import Label, Query


@dataclass(frozen=True)
class OracleConfig:
    accuracy_mean: float = 0.65
    accuracy_sd: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.accuracy_sd < 0:
            raise ConfigError(f"accuracy_sd must be >= 0, got {self.accuracy_sd}")


@dataclass
class BudgetLedger:
    labels_purchased: int = 0
    per_step_log: list[tuple[int, int]] = field(default_factory=list)

    def record(self, step: int, query_hash: int) -> None:
        self.labels_purchased += 1
        self.per_step_log.append((step, query_hash))

    def write_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for step, query_hash in self.per_step_log:
                fh.write(json.dumps({"step": step, "query_hash": query_hash}) + "\n")


class Annotator:
    """Returns the true label with probability ``p ~ Normal(mean, sd)``.

    ``p`` is clamped to ``[0, 1]`` and drawn afresh for every call; the crowd
    of annotators a query is sent to is collapsed into one returned label.
    The random draws do not depend on the true labels, so flipping every
    true label flips every answer.

    Draws are keyed by ``(seed, query, how often the query was asked)``. Calls
    stay independent, but two runs sharing a seed get the same answer for the
    n-th request of the same query whatever order they ask in.
    """

    def __init__(self, truth: Mapping[str, Label], config: OracleConfig | None = None) -> None:
        self.config = config or OracleConfig()
        self._truth = truth
        self._asked: dict[str, int] = {}
        self.ledger = BudgetLedger()

    def annotate(self, query: Query) -> Label:
        true_label = self._truth[query.text]
        nth = self._asked.get(query.text, 0)
        self._asked[query.text] = nth + 1
        key = hash64(query.text, derive_seed(self.config.seed, "oracle", nth))
        rng = np.random.default_rng(key)
        p_correct = rng.normal(self.config.accuracy_mean, self.config.accuracy_sd)
        p_correct = min(1.0, max(0.0, p_correct))
        correct = rng.random() < p_correct
        self.ledger.record(self.ledger.labels_purchased, hash64(query.text))
        return true_label if correct else true_label.flipped()
