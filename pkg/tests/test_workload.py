import math
from collections import Counter

import pytest

from ppal.errors import ConfigError
from ppal.workload import (
    CorpusSpec,
    Label,
    Query,
    calibrate_zipf_s,
    expected_singleton_fraction,
    generate,
    read_corpus,
    singleton_fraction,
    write_corpus,
    zipf_ks_distance,
)


@pytest.fixture(scope="module")
def desk():
    return generate(CorpusSpec())


def test_desk_sizes_are_exact(desk):
    assert len(desk.stream) == 250_000
    assert len(desk.counts()) == 5_800 == len(desk.truth)


def test_desk_singleton_fraction(desk):
    assert 0.55 <= singleton_fraction(desk.stream) <= 0.65


def test_desk_positive_fraction(desk):
    n = len(desk.truth)
    positive = sum(label is Label.POSITIVE for label in desk.truth.values()) / n
    assert abs(positive - 0.63) <= 3 * math.sqrt(0.63 * 0.37 / n)


def test_desk_follows_fitted_zipf(desk):
    assert zipf_ks_distance(desk.counts().values(), desk.zipf_s) <= 0.05


def test_all_singletons_when_totals_match():
    corpus = generate(CorpusSpec(n_total=1000, n_distinct_target=1000))
    assert singleton_fraction(corpus.stream) == 1.0


def test_generation_is_deterministic():
    spec = CorpusSpec(n_total=5000, n_distinct_target=600, n_intents=50, slot_vocab=400, seed=3)
    a, b = generate(spec), generate(spec)
    assert a.stream == b.stream and a.truth == b.truth
    other = generate(CorpusSpec(n_total=5000, n_distinct_target=600, n_intents=50, slot_vocab=400, seed=4))
    assert other.stream != a.stream


def test_calibration_hits_target():
    s = calibrate_zipf_s(250_000, 5_800, 0.6)
    assert expected_singleton_fraction(250_000, 5_800, s) == pytest.approx(0.6, abs=1e-6)
    assert expected_singleton_fraction(250_000, 5_800, s + 0.1) > 0.6


def test_unreachable_singleton_target():
    with pytest.raises(ConfigError, match="unreachable"):
        generate(CorpusSpec(n_total=1000, n_distinct_target=900, singleton_fraction_target=0.05))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_total": 10, "n_distinct_target": 11},
        {"positive_fraction": 1.0},
        {"singleton_fraction_target": 0.0},
        {"zipf_s": -1.0},
        {"n_total": 0},
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ConfigError):
        CorpusSpec(**kwargs)


def test_explicit_exponent_is_used():
    corpus = generate(CorpusSpec(n_total=20_000, n_distinct_target=1000, zipf_s=1.2, n_intents=50))
    assert corpus.zipf_s == 1.2


def test_labels_are_per_query(desk):
    # every occurrence of a text shares the text's label by construction
    assert set(desk.counts()) == set(desk.truth)


def test_corpus_file_round_trip(tmp_path):
    corpus = generate(CorpusSpec(n_total=3000, n_distinct_target=400, n_intents=40, slot_vocab=300))
    path = write_corpus(corpus.stream, corpus.truth, tmp_path / "corpus.tsv")
    stream, truth = read_corpus(path)
    assert stream == corpus.stream and truth == corpus.truth
    first = path.read_text(encoding="utf-8").splitlines()[0]
    text, label = first.split("\t")
    assert label in {"POSITIVE", "NEGATIVE"} and text == corpus.stream[0].text


def test_corpus_file_errors(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("no tab here\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_corpus(bad)
    bad.write_text("a b\tPOSITIVE\na b\tNEGATIVE\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="conflicting"):
        read_corpus(bad)
    bad.write_text("a b\tMAYBE\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_corpus(bad)


def test_query_validation():
    for text in ("", "a\tb", "a\nb"):
        with pytest.raises(ConfigError):
            Query(text)
    assert Query("x").key == Query("x").key
    assert Label.parse(" positive ") is Label.POSITIVE
    assert Label.NEGATIVE.flipped() is Label.POSITIVE


def test_head_queries_are_bare_intents(desk):
    top = [text for text, _ in Counter(q.text for q in desk.stream).most_common(20)]
    assert all(len(t.split()) == 2 for t in top)
