import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import sparse

from ppal.errors import ConfigError, DomainError
from ppal.learner import (
    PROB_CLIP,
    Ensemble,
    Strategy,
    acquisition_scores,
    bootstrap,
    entropy,
    least_confidence,
    margin,
    member_loss_and_grad,
    next_example,
)
from ppal.pipeline import PoolEntry, RankedExamplePool
from ppal.workload import Label, Query

DIM = 1 << 12


def logit(p):
    return math.log(p / (1.0 - p))


def pinned_model(probabilities, l=2):
    """Model whose members all give each single-word query the listed probability."""
    model = Ensemble(l=l, feature_dim=DIM)
    for text, p in probabilities.items():
        (col,), (val,) = model._row(text)
        model.weights[:, col] = logit(p) / val
    return model


def toy_golden():
    positive = [f"good thing {w}" for w in ("alpha", "beta", "gamma", "delta", "omega", "zeta")]
    negative = [f"bad stuff {w}" for w in ("alpha", "beta", "gamma", "delta", "omega", "zeta")]
    return [(Query(t), Label.POSITIVE) for t in positive] + [(Query(t), Label.NEGATIVE) for t in negative]


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    X = sparse.random(40, 25, density=0.2, random_state=1, format="csr")
    y = rng.integers(0, 2, 40).astype(float)
    w = rng.poisson(1.0, 40).astype(float)
    for trial in range(5):
        params = rng.normal(scale=1.5, size=26)
        _, grad = member_loss_and_grad(params, X, y, w, 0.7)
        h = 1e-6
        for i in range(params.size):
            up, down = params.copy(), params.copy()
            up[i] += h
            down[i] -= h
            fd = (member_loss_and_grad(up, X, y, w, 0.7)[0] - member_loss_and_grad(down, X, y, w, 0.7)[0]) / (2 * h)
            assert abs(fd - grad[i]) <= 1e-5 * max(1.0, abs(grad[i])), (trial, i)


def _closed_form(p):
    with mpmath.workdps(50):
        p = mpmath.mpf(p)
        top = max(p, 1 - p)
        return float(1 - top), float(top - (1 - top)), float(-p * mpmath.log(p) - (1 - p) * mpmath.log(1 - p))


@pytest.mark.parametrize("p", [0.5, 0.99])
def test_uncertainty_closed_forms(p):
    lc, mg, ent = _closed_form(p)
    assert abs(least_confidence(p) - lc) <= 1e-10
    assert abs(margin(p) - mg) <= 1e-10
    assert abs(entropy(p) - ent) <= 1e-10


def test_uncertainty_reference_values():
    assert least_confidence(0.5) == 0.5 and margin(0.5) == 0.0
    assert entropy(0.5) == pytest.approx(math.log(2), abs=1e-12)
    assert entropy(0.99) == pytest.approx(0.0560, abs=5e-5)
    assert least_confidence(0.99) == pytest.approx(0.01, abs=1e-12)
    assert margin(0.99) == pytest.approx(0.98, abs=1e-12)


@pytest.mark.parametrize("fn", [least_confidence, margin, entropy])
@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_uncertainty_domain(fn, p):
    with pytest.raises(DomainError):
        fn(p)


@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6))
def test_uncertainty_symmetric_and_peaked(p, q):
    assert entropy(p) == pytest.approx(entropy(1 - p), abs=1e-12)
    assert least_confidence(p) <= least_confidence(0.5) and entropy(p) <= entropy(0.5) + 1e-15
    assert margin(p) >= margin(0.5)
    if abs(p - 0.5) < abs(q - 0.5) - 1e-9:
        assert least_confidence(p) > least_confidence(q)
        assert entropy(p) > entropy(q)
        assert margin(p) < margin(q)


@settings(max_examples=50)
@given(arrays(np.float64, (3, 7), elements=st.floats(0.01, 0.99)), st.sampled_from(list(Strategy)))
def test_vector_scores_match_scalar_and_survive_monotone_transforms(member_p, strategy):
    mean = member_p.mean(axis=0)
    scores = acquisition_scores(mean, member_p, strategy)
    scalar = {
        Strategy.LEAST_CONFIDENCE: least_confidence,
        Strategy.MARGIN: lambda p: -margin(p),
        Strategy.ENTROPY: entropy,
        Strategy.VARIANCE: None,
    }[strategy]
    if scalar is not None:
        assert np.allclose(scores, [scalar(p) for p in mean], atol=1e-12)
    assert np.argmax(scores) == np.argmax(np.exp(3 * scores) + 1)


def test_predict_proba_is_member_mean():
    model = Ensemble(l=2, feature_dim=DIM)
    model.bias[:] = [logit(0.6), logit(0.8)]
    assert model.predict_proba(Query("anything")) == pytest.approx(0.7)
    same = Ensemble(l=3, feature_dim=DIM)
    same.bias[:] = logit(0.3)
    assert same.predict_proba(Query("x y")) == pytest.approx(0.3)


def test_variance_zero_when_members_agree():
    model = pinned_model({"hello": 0.8}, l=5)
    assert model.variance_score(Query("hello")) == pytest.approx(0.0, abs=1e-15)


def test_variance_maximal_for_opposite_members():
    model = Ensemble(l=2, feature_dim=DIM)
    model.bias[:] = [-40.0, 40.0]
    assert model.variance_score(Query("q")) == pytest.approx(0.25, abs=1e-8)
    p = model.member_proba(model.featurize(["q"]))
    assert p.min() == PROB_CLIP and p.max() == 1 - PROB_CLIP


def test_variance_invariant_under_member_permutation():
    model = bootstrap(toy_golden(), l=4, seed=3, feature_dim=DIM)
    permuted = Ensemble(l=4, feature_dim=DIM, seed=model.seed)
    order = [2, 0, 3, 1]
    permuted.weights = model.weights[order]
    permuted.bias = model.bias[order]
    for text in ("good thing new", "bad stuff new", "other"):
        assert permuted.variance_score(Query(text)) == pytest.approx(model.variance_score(Query(text)), abs=1e-15)


def test_bootstrap_shape_and_determinism():
    golden = toy_golden()
    a = bootstrap(golden, l=10, seed=1, feature_dim=DIM)
    b = bootstrap(golden, l=10, seed=1, feature_dim=DIM)
    assert a.weights.shape == (10, DIM)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
    c = bootstrap(golden, l=10, seed=2, feature_dim=DIM)
    assert not np.array_equal(a.weights, c.weights)


def test_bootstrap_preconditions():
    golden = toy_golden()
    with pytest.raises(ConfigError):
        bootstrap([g for g in golden if g[1] is Label.POSITIVE], l=3, feature_dim=DIM)
    with pytest.raises(ConfigError):
        bootstrap([], l=3, feature_dim=DIM)
    with pytest.raises(ConfigError):
        Ensemble(l=1)


def test_separable_training_examples_scored_correctly():
    golden = toy_golden()
    model = Ensemble(l=3, feature_dim=DIM, l2=0.01, seed=4)
    model.fit(golden)
    for query, label in golden:
        p = model.predict_proba(query)
        assert (p > 0.5) == (label is Label.POSITIVE)


def test_bagging_weights_are_keyed_by_query():
    model = Ensemble(l=3, feature_dim=DIM, seed=8)
    texts = [f"text {i}" for i in range(50)]
    full = model.replicate_weights(texts)
    fresh = Ensemble(l=3, feature_dim=DIM, seed=8)
    assert np.array_equal(fresh.replicate_weights(texts[::-1])[:, ::-1], full)
    assert full.mean() == pytest.approx(1.0, abs=0.3)


def _pool(texts):
    return RankedExamplePool([PoolEntry(Query(t), 0.0) for t in texts], k=1, beta=1.0)


@pytest.mark.parametrize("strategy", ["least_confidence", "margin", "entropy"])
def test_next_example_picks_least_certain(strategy):
    model = pinned_model({"first": 0.9, "second": 0.55, "third": 0.99})
    pick = next_example(_pool(["first", "second", "third"]), model, Strategy(strategy))
    assert pick.query.text == "second"


def test_next_example_single_and_exhausted():
    model = pinned_model({"only": 0.7})
    pool = _pool(["only"])
    entry = next_example(pool, model)
    assert entry.query.text == "only"
    pool.take(entry)
    assert next_example(pool, model) is None
    assert next_example(_pool([]), model) is None


def test_next_example_ties_go_to_pool_order():
    model = pinned_model({"a": 0.6, "b": 0.4})
    assert next_example(_pool(["b", "a"]), model).query.text == "b"
    assert next_example(_pool(["a", "b"]), model).query.text == "a"


def test_update_barely_moves_confident_prediction():
    model = pinned_model({"sure": 0.995}, l=3)
    before = model.predict_proba(Query("sure"))
    model.update(Query("sure"), Label.POSITIVE)
    assert abs(model.predict_proba(Query("sure")) - before) <= 0.01


def test_repeated_updates_converge():
    model = Ensemble(l=3, feature_dim=DIM)
    query = Query("turn on the lights")
    for step in range(300):
        model.update(query, Label.POSITIVE, step)
    assert model.predict_proba(query) > 0.9
    assert len(model.training_log) == 300
    assert model.training_log[-1] == (query.key, 1, 299)


def test_identical_members_stay_identical():
    model = Ensemble(l=4, feature_dim=DIM)
    for i, text in enumerate(["a b", "c d", "a d", "b c"] * 5):
        model.update(Query(text), Label(i % 2))
    for text in ("a b", "x", "c d e"):
        assert model.variance_score(Query(text)) == pytest.approx(0.0, abs=1e-18)


def test_refit_uses_all_labels():
    golden = toy_golden()
    model = bootstrap(golden, l=3, seed=0, feature_dim=DIM)
    model.update(Query("good thing extra"), Label.NEGATIVE)
    assert "good thing extra" in model.labeled
    model.refit()
    again = bootstrap(golden, l=3, seed=0, feature_dim=DIM)
    again.labeled["good thing extra"] = Label.NEGATIVE
    again.fit([(Query(t), y) for t, y in again.labeled.items()])
    assert np.allclose(model.weights, again.weights, atol=1e-4)


def test_checkpoint_round_trip():
    model = bootstrap(toy_golden(), l=3, seed=5, feature_dim=DIM)
    blob = model.to_bytes()
    assert blob[:4] == b"PPAL"
    back = Ensemble.from_bytes(blob)
    assert back.l == 3 and back.feature_dim == DIM and back.seed == model.seed
    assert np.allclose(back.weights, model.weights, atol=1e-6)
    for text in ("good thing alpha", "bad stuff beta"):
        assert back.predict_proba(Query(text)) == pytest.approx(model.predict_proba(Query(text)), abs=1e-6)
    with pytest.raises(ConfigError):
        Ensemble.from_bytes(blob[:-4])
    with pytest.raises(ConfigError):
        Ensemble.from_bytes(b"XXXX" + blob[4:])
