"""Experiment driver for privacy-preserving active learning sweeps.

One run takes a corpus, a sampling rate ``beta``, a frequency threshold ``k``
and a seed through the whole loop: bootstrap the ensemble on a golden set,
subsample, filter and rank the pool, then repeatedly pick a query, release it,
buy a noisy label and update the model. Accuracy on a held-out set is recorded
as the label budget grows.

All randomness in a run comes from the seed through :func:`derive_seed`
under fixed labels (``"split"``, ``"bootstrap"``, ``"subsample"``, ``"sketch"``,
``"oracle"``). None of those streams depends on ``beta`` or ``k``, so runs that
share a seed are paired: smaller samples are subsets of larger ones and a query
asked in two runs gets the same noisy answer.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import math
import statistics
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from ppal import privacy
from ppal.annotator import Annotator, OracleConfig
from ppal.cardinality import HyperLogLog
from ppal.errors import ConfigError
from ppal.frequency import CountMeanMin
from ppal.hashing import derive_seed
from ppal.learner import Ensemble, Strategy, bootstrap, next_example
from ppal.pipeline import (
    FrequencyScope,
    ReleaseLedger,
    build_pool,
    expected_pool_size,
    subsample,
)
from ppal.workload import Corpus, CorpusSpec, Label, Query, generate, read_corpus

log = logging.getLogger(__name__)

REPORT_FILES = (
    "accuracy_vs_k.csv",
    "budget_vs_k.csv",
    "budget_accuracy.csv",
    "privacy_table.csv",
    "summary.json",
)


@dataclass
class RunConfig:
    corpus: CorpusSpec | str = field(default_factory=CorpusSpec)
    betas: list[float] = field(default_factory=lambda: [0.1, 0.3, 0.6, 0.9])
    ks: list[int] = field(default_factory=lambda: [1, 20, 100, 200, 500])
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    bootstrap_size: int = 1000
    eval_size: int | None = None  # default: 10% of distinct queries
    strategy: str = "least_confidence"
    l: int = 10
    feature_dim: int = 1 << 18
    l2: float = 1.0
    learning_rate: float = 0.1
    budget_cap: int | None = None
    eval_every: int = 250
    refit_every: int = 500
    final_refit: bool = True
    frequency_scope: str = "subsample"
    cmm_depth: int = 4
    cmm_width: int = 16384
    hll_precision: int = 14
    epsilon: float = 1.0
    n_max: int = privacy.DEFAULT_N_MAX
    accuracy_mean: float = 0.65
    accuracy_sd: float = 0.01
    table_epsilons: list[float] = field(default_factory=lambda: list(privacy.GRID_EPSILONS))
    table_deltas: list[float] = field(default_factory=lambda: list(privacy.GRID_DELTAS))

    def __post_init__(self) -> None:
        if isinstance(self.corpus, dict):
            self.corpus = CorpusSpec(**self.corpus)
        for beta in self.betas:
            if not 0.0 < beta <= 1.0:
                raise ConfigError(f"beta must lie in (0, 1], got {beta}")
        for k in self.ks:
            if int(k) != k or k < 1:
                raise ConfigError(f"k must be an integer >= 1, got {k}")
        if not self.betas or not self.ks or not self.seeds:
            raise ConfigError("betas, ks and seeds must be non-empty")
        try:
            Strategy(self.strategy)
            FrequencyScope(self.frequency_scope)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.l < 2:
            raise ConfigError(f"l must be >= 2, got {self.l}")
        if self.bootstrap_size < 2:
            raise ConfigError("bootstrap_size must be >= 2")
        if self.eval_every < 1 or self.refit_every < 0:
            raise ConfigError("eval_every must be >= 1 and refit_every >= 0")
        if self.budget_cap is not None and self.budget_cap < 0:
            raise ConfigError("budget_cap must be >= 0")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        if isinstance(self.corpus, CorpusSpec):
            out["corpus"] = dataclasses.asdict(self.corpus)
        return out


@dataclass
class RunMetrics:
    beta: float
    k: int
    seed: int
    epsilon: float
    delta: float
    base_epsilon: float
    base_delta: float
    accuracy_curve: list[tuple[int, float]]
    final_accuracy: float
    bootstrap_accuracy: float
    labels_purchased: int
    pool_size: int
    expected_pool_size: int
    empty_pool: bool
    hll_seed: int = 0
    wall_time: float = 0.0

    @property
    def seeds(self) -> list[int]:
        return [self.seed]


# corpus and per-seed state -------------------------------------------------


@lru_cache(maxsize=4)
def _load_corpus(source: CorpusSpec | str) -> Corpus:
    if isinstance(source, CorpusSpec):
        return generate(source)
    stream, truth = read_corpus(source)
    return Corpus(spec=CorpusSpec(n_total=len(stream), n_distinct_target=len(truth)), stream=stream,
                  truth=truth, zipf_s=float("nan"))


def load_corpus(config: RunConfig) -> Corpus:
    return _load_corpus(config.corpus)


@dataclass
class _SeedState:
    eval_queries: list[Query]
    eval_labels: np.ndarray
    golden: list[tuple[Query, Label]]
    model: Ensemble
    excluded: frozenset[str]


def split_corpus(
    corpus: Corpus, seed: int, bootstrap_size: int, eval_size: int | None
) -> tuple[list[Query], list[Query]]:
    """Held-out and golden queries, disjoint, drawn uniformly from distinct queries."""
    distinct = sorted(corpus.distinct(), key=lambda q: q.key)
    n = len(distinct)
    n_eval = round(0.1 * n) if eval_size is None else eval_size
    if n_eval < 1 or n_eval + bootstrap_size > n:
        raise ConfigError(
            f"cannot split {n} distinct queries into {n_eval} held-out and {bootstrap_size} golden"
        )
    order = np.random.default_rng(derive_seed(seed, "split")).permutation(n)
    held = [distinct[i] for i in order[:n_eval]]
    golden = [distinct[i] for i in order[n_eval : n_eval + bootstrap_size]]
    return held, golden


def _seed_state(config: RunConfig, corpus: Corpus, seed: int) -> _SeedState:
    held, golden_queries = split_corpus(corpus, seed, config.bootstrap_size, config.eval_size)
    golden = [(q, corpus.truth[q.text]) for q in golden_queries]
    model = bootstrap(
        golden,
        l=config.l,
        seed=derive_seed(seed, "bootstrap"),
        feature_dim=config.feature_dim,
        l2=config.l2,
        learning_rate=config.learning_rate,
    )
    eval_labels = np.array([int(corpus.truth[q.text]) for q in held], dtype=np.int64)
    excluded = frozenset(q.text for q in held) | frozenset(q.text for q, _ in golden)
    return _SeedState(held, eval_labels, golden, model, excluded)


def run_privacy(config: RunConfig, beta: float, k: int) -> tuple[float, float, float, float]:
    """Reported ``(epsilon, delta)`` for the run and the unsampled base guarantee.

    ``delta`` comes from the accountant at the configured ``epsilon``. The base
    guarantee is what subsampling at ``beta`` amplifies into the reported one,
    and the amplification is recomputed as a bookkeeping check.
    """
    epsilon = config.epsilon
    delta = privacy.base_delta_for_k(k, beta, epsilon, config.n_max)
    base_epsilon, base_delta = privacy.deamplify(epsilon, delta, beta)
    if base_delta < 1.0:
        check = privacy.amplify(base_epsilon, base_delta, 1.0, beta)
        if not (math.isclose(check[0], epsilon, rel_tol=1e-9, abs_tol=1e-12)
                and math.isclose(check[1], delta, rel_tol=1e-9, abs_tol=1e-300)):
            raise RuntimeError(f"privacy bookkeeping mismatch: {check} != {(epsilon, delta)}")
    return epsilon, delta, base_epsilon, min(1.0, base_delta)


def _accuracy(model: Ensemble, X_eval, labels: np.ndarray) -> float:
    return 100.0 * float(np.mean(model.predict(X_eval) == labels))


# runs ------------------------------------------------------------------------


def run_single(
    config: RunConfig, beta: float, k: int, seed: int, *, _state: _SeedState | None = None
) -> RunMetrics:
    """One full active-learning run at ``(beta, k)``."""
    start = time.perf_counter()
    corpus = load_corpus(config)
    state = _state or _seed_state(config, corpus, seed)
    model = copy.deepcopy(state.model)
    epsilon, delta, base_epsilon, base_delta = run_privacy(config, beta, k)

    sample = subsample(corpus.stream, beta, derive_seed(seed, "subsample"))
    hll = HyperLogLog(config.hll_precision, seed=derive_seed(seed, "sketch", "hll"))
    hll.update(q.text for q in corpus.stream)
    freq = CountMeanMin(config.cmm_depth, config.cmm_width, seed=derive_seed(seed, "sketch", "cmm"))
    scope = FrequencyScope(config.frequency_scope)
    freq.update_many(q.text for q in (sample if scope is FrequencyScope.SUBSAMPLE else corpus.stream))

    strategy = Strategy(config.strategy)
    pool = build_pool(sample, k, freq, model, strategy=strategy, exclude=state.excluded, beta=beta)
    ledger = ReleaseLedger()
    annotator = Annotator(
        corpus.truth,
        OracleConfig(config.accuracy_mean, config.accuracy_sd, derive_seed(seed, "oracle")),
    )

    X_eval = model.featurize([q.text for q in state.eval_queries])
    bootstrap_accuracy = _accuracy(model, X_eval, state.eval_labels)
    curve = [(0, bootstrap_accuracy)]
    step = 0
    last_refit = 0
    while config.budget_cap is None or step < config.budget_cap:
        entry = next_example(pool, model, strategy)
        if entry is None:
            break
        query = ledger.release_one_of_k(entry, k=k, beta=beta, step=step, pool=pool)
        label = annotator.annotate(query)
        model.update(query, label, step)
        step += 1
        if config.refit_every and step % config.refit_every == 0:
            model.refit()
            last_refit = step
        if step % config.eval_every == 0:
            curve.append((step, _accuracy(model, X_eval, state.eval_labels)))
    if config.final_refit and step > last_refit:
        model.refit()
        if curve[-1][0] == step:
            curve.pop()
    if curve[-1][0] != step:
        curve.append((step, _accuracy(model, X_eval, state.eval_labels)))

    if not (annotator.ledger.labels_purchased == len(ledger) == len(model.training_log) == step):
        raise RuntimeError("budget accounting mismatch between ledger, oracle and learner")
    return RunMetrics(
        beta=beta,
        k=k,
        seed=seed,
        epsilon=epsilon,
        delta=delta,
        base_epsilon=base_epsilon,
        base_delta=base_delta,
        accuracy_curve=curve,
        final_accuracy=curve[-1][1],
        bootstrap_accuracy=bootstrap_accuracy,
        labels_purchased=step,
        pool_size=len(pool),
        expected_pool_size=expected_pool_size(hll, beta),
        empty_pool=len(pool) == 0,
        hll_seed=hll.seed,
        wall_time=time.perf_counter() - start,
    )


@dataclass
class GridResult:
    runs: list[RunMetrics]
    failures: list[dict[str, Any]]
    config: RunConfig


def run_grid(config: RunConfig) -> GridResult:
    """Every ``(beta, k, seed)`` combination; a failing cell is recorded and skipped."""
    corpus = load_corpus(config)
    runs: list[RunMetrics] = []
    failures: list[dict[str, Any]] = []
    for seed in config.seeds:
        state = _seed_state(config, corpus, seed)
        for beta in config.betas:
            for k in config.ks:
                try:
                    runs.append(run_single(config, beta, k, seed, _state=state))
                except Exception as exc:  # noqa: BLE001 - one bad cell must not stop the sweep
                    log.exception("run beta=%s k=%s seed=%s failed", beta, k, seed)
                    failures.append({"beta": beta, "k": k, "seed": seed, "error": repr(exc)})
    return GridResult(runs, failures, config)


# aggregation -----------------------------------------------------------------


def _cells(runs: Sequence[RunMetrics]) -> dict[tuple[float, int], list[RunMetrics]]:
    cells: dict[tuple[float, int], list[RunMetrics]] = {}
    for run in runs:
        cells.setdefault((run.beta, run.k), []).append(run)
    return dict(sorted(cells.items()))


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, sd


def curve_at(curve: Sequence[tuple[int, float]], budget: float) -> float:
    """Accuracy at ``budget`` by linear interpolation along the curve."""
    budgets = [b for b, _ in curve]
    accuracies = [a for _, a in curve]
    return float(np.interp(budget, budgets, accuracies))


def quintile_gains(curve: Sequence[tuple[int, float]]) -> tuple[float, float]:
    """Accuracy gained over the first and the last fifth of the budget."""
    total = curve[-1][0]
    first = curve_at(curve, 0.2 * total) - curve_at(curve, 0.0)
    last = curve_at(curve, float(total)) - curve_at(curve, 0.8 * total)
    return first, last


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation; ``nan`` when either side is constant."""
    if len(set(x)) < 2 or len(set(y)) < 2:
        return float("nan")
    return float(stats.spearmanr(x, y).statistic)


def trend_summary(runs: Sequence[RunMetrics]) -> dict[str, Any]:
    """Rank correlations of seed-mean accuracy and budget against k and beta."""
    cells = _cells(runs)
    betas = sorted({b for b, _ in cells})
    ks = sorted({k for _, k in cells})
    mean_acc = {c: statistics.fmean(r.final_accuracy for r in rs) for c, rs in cells.items()}
    mean_budget = {c: statistics.fmean(r.labels_purchased for r in rs) for c, rs in cells.items()}
    out: dict[str, Any] = {"accuracy_vs_k": {}, "budget_vs_k": {}, "budget_vs_beta": {}}
    for beta in betas:
        row = [k for k in ks if (beta, k) in cells]
        out["accuracy_vs_k"][str(beta)] = spearman(row, [mean_acc[(beta, k)] for k in row])
        out["budget_vs_k"][str(beta)] = spearman(row, [mean_budget[(beta, k)] for k in row])
    for k in ks:
        col = [b for b in betas if (b, k) in cells]
        out["budget_vs_beta"][str(k)] = spearman(col, [mean_budget[(b, k)] for b in col])
    if cells:
        largest = max(cells, key=lambda c: (mean_budget[c], c))
        gains = [quintile_gains(r.accuracy_curve) for r in cells[largest] if r.labels_purchased > 0]
        if gains:
            out["saturation"] = {
                "beta": largest[0],
                "k": largest[1],
                "first_quintile_gain": statistics.fmean(g[0] for g in gains),
                "last_quintile_gain": statistics.fmean(g[1] for g in gains),
            }
    return out


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def emit_reports(result: GridResult, out_dir: str | Path) -> list[Path]:
    """Write four CSV tables and a JSON summary into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = _cells(result.runs)
    config = result.config

    acc_rows, budget_rows = [], []
    mean_final: dict[tuple[float, int], float] = {}
    for (beta, k), runs in cells.items():
        acc_mean, acc_sd = _mean_sd([r.final_accuracy for r in runs])
        boot_mean, _ = _mean_sd([r.bootstrap_accuracy for r in runs])
        labels_mean, labels_sd = _mean_sd([r.labels_purchased for r in runs])
        mean_final[(beta, k)] = acc_mean
        acc_rows.append([repr(beta), str(k), str(len(runs)), _fmt(acc_mean), _fmt(acc_sd),
                         _fmt(boot_mean), repr(runs[0].epsilon), repr(runs[0].delta)])
        budget_rows.append([repr(beta), str(k), str(len(runs)), _fmt(labels_mean), _fmt(labels_sd),
                            _fmt(statistics.fmean(r.pool_size for r in runs)),
                            _fmt(statistics.fmean(r.expected_pool_size for r in runs))])
    _write_csv(out / "accuracy_vs_k.csv",
               ["beta", "k", "n_seeds", "mean_accuracy", "sd_accuracy", "bootstrap_accuracy",
                "epsilon", "delta"], acc_rows)
    _write_csv(out / "budget_vs_k.csv",
               ["beta", "k", "n_seeds", "mean_labels", "sd_labels", "mean_pool_size",
                "mean_expected_pool_size"], budget_rows)

    scatter = [
        [repr(r.beta), str(r.k), str(r.seed), str(budget), _fmt(accuracy)]
        for r in sorted(result.runs, key=lambda r: (r.beta, r.k, r.seed))
        for budget, accuracy in r.accuracy_curve
    ]
    _write_csv(out / "budget_accuracy.csv", ["beta", "k", "seed", "budget", "accuracy"], scatter)

    table = privacy.grid(
        privacy.GRID_BETAS, privacy.GRID_KS, config.table_epsilons, config.table_deltas, config.n_max
    )
    for cell in table:
        cell.accuracy = mean_final.get((cell.params.beta, cell.params.k))
    privacy.write_grid_csv(table, out / "privacy_table.csv")

    summary = {
        "config": config.to_dict(),
        "n_runs": len(result.runs),
        "failures": result.failures,
        "trends": trend_summary(result.runs),
        "cells": [
            {
                "beta": beta,
                "k": k,
                "mean_final_accuracy": mean_final[(beta, k)],
                "mean_labels_purchased": statistics.fmean(r.labels_purchased for r in runs),
                "empty_pool_runs": sum(r.empty_pool for r in runs),
                "epsilon": runs[0].epsilon,
                "delta": runs[0].delta,
                "base_epsilon": runs[0].base_epsilon,
                "base_delta": runs[0].base_delta,
            }
            for (beta, k), runs in cells.items()
        ],
        "wall_time_seconds": sum(r.wall_time for r in result.runs),
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, allow_nan=True) + "\n", encoding="utf-8")
    return [out / name for name in REPORT_FILES]
