import csv
import dataclasses
import json

import pytest

from ppal import harness, privacy
from ppal.errors import ConfigError
from ppal.harness import (
    REPORT_FILES,
    RunConfig,
    emit_reports,
    quintile_gains,
    run_grid,
    run_single,
    spearman,
    split_corpus,
)


def _without_time(metrics):
    return dataclasses.replace(metrics, wall_time=0.0)


def test_single_run_invariants(small_config):
    m = run_single(small_config, 0.9, 1, seed=1)
    budgets = [b for b, _ in m.accuracy_curve]
    assert budgets == sorted(set(budgets)) and budgets[0] == 0
    assert budgets[-1] == m.labels_purchased == m.pool_size > 0
    assert all(0.0 <= a <= 100.0 for _, a in m.accuracy_curve)
    assert m.final_accuracy == m.accuracy_curve[-1][1]
    assert m.bootstrap_accuracy == m.accuracy_curve[0][1]
    assert not m.empty_pool


def test_run_is_repeatable(small_config):
    a = run_single(small_config, 0.3, 20, seed=2)
    b = run_single(small_config, 0.3, 20, seed=2)
    assert _without_time(a) == _without_time(b)


def test_privacy_fields_come_from_accountant(small_config):
    for beta, k in ((0.3, 20), (0.9, 1), (1.0, 1)):
        m = run_single(dataclasses.replace(small_config, budget_cap=5), beta, k, seed=1)
        assert m.epsilon == small_config.epsilon
        assert m.delta == privacy.base_delta_for_k(k, beta, small_config.epsilon)
        if m.base_delta < 1.0:
            assert privacy.amplify(m.base_epsilon, m.base_delta, 1.0, beta) == pytest.approx((m.epsilon, m.delta))
    assert m.delta == 1.0  # the unsampled baseline carries no guarantee


def test_budget_cap(small_config):
    m = run_single(dataclasses.replace(small_config, budget_cap=30), 0.9, 1, seed=1)
    assert m.labels_purchased == 30
    assert m.pool_size > 30


def test_empty_pool_reports_bootstrap_accuracy(small_config):
    m = run_single(small_config, 0.3, 10**6, seed=1)
    assert m.empty_pool and m.labels_purchased == 0
    assert m.accuracy_curve == [(0, m.bootstrap_accuracy)]
    assert m.final_accuracy == m.bootstrap_accuracy


def test_strong_privacy_buys_fewer_labels(small_config):
    baseline = run_single(small_config, 1.0, 1, seed=1)
    private = run_single(small_config, 0.3, 20, seed=1)
    assert private.labels_purchased < baseline.labels_purchased


def test_full_stream_frequency_scope(small_config):
    full = run_single(dataclasses.replace(small_config, frequency_scope="full"), 0.3, 20, seed=1)
    sampled = run_single(small_config, 0.3, 20, seed=1)
    assert full.pool_size >= sampled.pool_size


def test_split_is_disjoint(small_corpus):
    held, golden = split_corpus(small_corpus, seed=3, bootstrap_size=200, eval_size=None)
    assert len(held) == 150 and len(golden) == 200
    assert not {q.text for q in held} & {q.text for q in golden}
    with pytest.raises(ConfigError):
        split_corpus(small_corpus, seed=3, bootstrap_size=1450, eval_size=None)


def test_pool_excludes_held_out_and_golden(small_config, small_corpus, monkeypatch):
    seen = {}
    real = harness.build_pool

    def spy(sample, k, freq, model, **kwargs):
        pool = real(sample, k, freq, model, **kwargs)
        seen["pool"] = {e.query.text for e in pool}
        seen["excluded"] = kwargs["exclude"]
        return pool

    monkeypatch.setattr(harness, "build_pool", spy)
    run_single(dataclasses.replace(small_config, budget_cap=1), 0.9, 1, seed=1)
    held, golden = split_corpus(small_corpus, 1, small_config.bootstrap_size, None)
    assert seen["excluded"] == {q.text for q in held} | {q.text for q in golden}
    assert not seen["pool"] & seen["excluded"]


@pytest.fixture(scope="module")
def grid_result():
    config = RunConfig(
        corpus=harness.CorpusSpec(n_total=20_000, n_distinct_target=1_500, n_intents=120, slot_vocab=800, seed=7),
        betas=[0.3, 0.9],
        ks=[1, 20],
        seeds=[1, 2],
        bootstrap_size=200,
        l=4,
        feature_dim=1 << 14,
        eval_every=50,
        refit_every=100,
    )
    return run_grid(config)


def test_grid_covers_product(grid_result):
    assert len(grid_result.runs) == 2 * 2 * 2 and not grid_result.failures
    assert {(r.beta, r.k, r.seed) for r in grid_result.runs} == {
        (b, k, s) for b in (0.3, 0.9) for k in (1, 20) for s in (1, 2)
    }


def test_grid_matches_single_runs(grid_result):
    run = grid_result.runs[-1]
    alone = run_single(grid_result.config, run.beta, run.k, run.seed)
    assert _without_time(alone) == _without_time(run)


def test_reports(grid_result, tmp_path):
    paths = emit_reports(grid_result, tmp_path / "a")
    assert [p.name for p in paths] == list(REPORT_FILES)
    with (tmp_path / "a" / "privacy_table.csv").open() as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 256
    overlay = [r for r in table if r["beta"] in ("0.3", "0.9") and r["k"] == "20"]
    assert overlay and all(r["accuracy"] for r in overlay)
    assert all(r["accuracy"] == "" for r in table if r["beta"] == "0.1")
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["n_runs"] == 8 and len(summary["cells"]) == 4


def test_reports_are_byte_identical(grid_result, tmp_path):
    emit_reports(grid_result, tmp_path / "a")
    again = run_grid(grid_result.config)
    emit_reports(again, tmp_path / "b")
    for name in REPORT_FILES:
        if name.endswith(".csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_failing_cell_is_recorded(small_config, monkeypatch):
    real = harness.run_single

    def flaky(config, beta, k, seed, **kwargs):
        if (beta, k, seed) == (0.3, 20, 2):
            raise RuntimeError("boom")
        return real(config, beta, k, seed, **kwargs)

    monkeypatch.setattr(harness, "run_single", flaky)
    result = run_grid(dataclasses.replace(small_config, budget_cap=3))
    assert len(result.runs) == 7
    assert result.failures == [{"beta": 0.3, "k": 20, "seed": 2, "error": "RuntimeError('boom')"}]


def test_trend_helpers():
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 3], [5, 5, 5]) != spearman([1, 2, 3], [5, 5, 5])  # nan
    first, last = quintile_gains([(0, 50.0), (100, 70.0), (500, 80.0)])
    assert first == pytest.approx(20.0) and last == pytest.approx(2.5)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"betas": [0.0]},
        {"ks": [0]},
        {"strategy": "random"},
        {"frequency_scope": "everything"},
        {"l": 1},
        {"seeds": []},
        {"budget_cap": -1},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_config_from_dict():
    config = RunConfig.from_dict({"corpus": {"n_total": 5000, "n_distinct_target": 500}, "ks": [1]})
    assert config.corpus.n_total == 5000 and config.ks == [1]
    assert RunConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict({"nonsense": 1})
