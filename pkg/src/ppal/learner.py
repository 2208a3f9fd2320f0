"""Bagged logistic-regression ensemble and uncertainty-based acquisition.

Each of the ``l`` members is an L2-regularised logistic regression over
signed, hashed bag-of-words features. Members are fitted on Poisson(1)
bootstrap replicates of the labelled data, and the spread of their predicted
probabilities is the prediction variance used to rank candidate queries.

Poisson weights are derived from ``(seed, member, query)`` rather than drawn
by position, so adding labelled examples never reshuffles the replicate
weights of the examples already there.
"""

from __future__ import annotations

import enum
import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy import optimize, sparse
from scipy.special import expit

from ppal.errors import ConfigError, DomainError
from ppal.hashing import MASK64, derive_seed, hash64
from ppal.workload import Label, Query

if TYPE_CHECKING:
    from ppal.pipeline import PoolEntry, RankedExamplePool

PROB_CLIP = 1e-9
DEFAULT_FEATURE_DIM = 1 << 18
DEFAULT_MEMBERS = 10

_CHECKPOINT_MAGIC = b"PPAL"
_CHECKPOINT_VERSION = 1
_CHECKPOINT_HEADER = struct.Struct("<4sBIHd")  # magic, version, feature_dim, l, l2


class Strategy(str, enum.Enum):
    LEAST_CONFIDENCE = "least_confidence"
    MARGIN = "margin"
    ENTROPY = "entropy"
    VARIANCE = "variance"


def _check_probability(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")


def least_confidence(p: float) -> float:
    """``1 - max(p, 1 - p)``: one minus the probability of the predicted class."""
    _check_probability(p)
    return 1.0 - max(p, 1.0 - p)


def margin(p: float) -> float:
    """Gap between the two class probabilities. Small means uncertain."""
    _check_probability(p)
    top = max(p, 1.0 - p)
    return top - (1.0 - top)


def entropy(p: float) -> float:
    """Shannon entropy in nats of a Bernoulli(p) prediction."""
    _check_probability(p)
    return -p * math.log(p) - (1.0 - p) * math.log1p(-p)


def acquisition_scores(mean_p: np.ndarray, member_p: np.ndarray, strategy: Strategy) -> np.ndarray:
    """Vectorised acquisition score, larger meaning more worth labelling.

    ``mean_p`` holds ensemble-mean probabilities; ``member_p`` is ``(l, n)``.
    Margin is negated so that every strategy is maximised.
    """
    top = np.maximum(mean_p, 1.0 - mean_p)
    if strategy is Strategy.LEAST_CONFIDENCE:
        return 1.0 - top
    if strategy is Strategy.MARGIN:
        return -(2.0 * top - 1.0)
    if strategy is Strategy.ENTROPY:
        return -(mean_p * np.log(mean_p) + (1.0 - mean_p) * np.log1p(-mean_p))
    if strategy is Strategy.VARIANCE:
        return member_p.var(axis=0)
    raise ConfigError(f"unknown strategy {strategy!r}")


def _poisson1(u: float) -> int:
    """Inverse CDF of Poisson(1) at ``u`` in [0, 1)."""
    k = 0
    pmf = cdf = math.exp(-1.0)
    while u >= cdf and k < 30:
        k += 1
        pmf /= k
        cdf += pmf
    return k


def member_loss_and_grad(
    params: np.ndarray, X: sparse.csr_matrix, y: np.ndarray, weights: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Weighted logistic loss plus ``l2/2 * |w|^2`` and its gradient.

    ``params`` is ``[w..., b]``; the bias is not regularised.
    """
    w, b = params[:-1], params[-1]
    z = X @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = float(weights @ (np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w @ w)
    residual = weights * (expit(z) - y)
    grad = np.empty_like(params)
    grad[:-1] = X.T @ residual + l2 * w
    grad[-1] = residual.sum()
    return loss, grad


@dataclass
class Ensemble:
    """``l`` logistic members sharing one hashed feature space."""

    l: int = DEFAULT_MEMBERS
    feature_dim: int = DEFAULT_FEATURE_DIM
    l2: float = 1.0
    learning_rate: float = 0.1
    seed: int = 0
    bias: np.ndarray = field(init=False, repr=False)
    training_log: list[tuple[int, int, int]] = field(init=False, default_factory=list, repr=False)
    labeled: dict[str, Label] = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.l < 2:
            raise ConfigError(f"an ensemble needs l >= 2 members, got {self.l}")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        # stored feature-major so that X @ W.T needs no copy
        self._weights_t = np.zeros((self.feature_dim, self.l))
        self.bias = np.zeros(self.l)
        self._feature_seed = derive_seed(self.seed, "features")
        self._feature_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._replicate_cache: dict[str, np.ndarray] = {}

    @property
    def weights(self) -> np.ndarray:
        """``(l, feature_dim)`` member weights (a writable view)."""
        return self._weights_t.T

    @weights.setter
    def weights(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != (self.l, self.feature_dim):
            raise ConfigError(f"weights must have shape {(self.l, self.feature_dim)}, got {value.shape}")
        self._weights_t = np.ascontiguousarray(value.T)

    # features -----------------------------------------------------------

    def _row(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        cached = self._feature_cache.get(text)
        if cached is not None:
            return cached
        acc: dict[int, float] = {}
        for token in text.split():
            h = hash64(token, self._feature_seed)
            col = h % self.feature_dim
            acc[col] = acc.get(col, 0.0) + (1.0 if h >> 63 else -1.0)
        cols = np.fromiter(acc.keys(), dtype=np.int64, count=len(acc))
        vals = np.fromiter(acc.values(), dtype=np.float64, count=len(acc))
        norm = math.sqrt(float(vals @ vals))
        if norm > 0:
            vals /= norm
        self._feature_cache[text] = (cols, vals)
        return cols, vals

    def featurize(self, texts: Sequence[str]) -> sparse.csr_matrix:
        """Unit-norm signed hashed bag of words, one row per text."""
        indptr = [0]
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []
        for text in texts:
            c, v = self._row(text)
            cols.append(c)
            vals.append(v)
            indptr.append(indptr[-1] + len(c))
        return sparse.csr_matrix(
            (
                np.concatenate(vals) if vals else np.zeros(0),
                np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64),
                np.asarray(indptr),
            ),
            shape=(len(texts), self.feature_dim),
        )

    # prediction ----------------------------------------------------------

    def member_proba(self, X: sparse.csr_matrix) -> np.ndarray:
        """``(l, n)`` positive-class probabilities, clipped away from 0 and 1."""
        z = (X @ self._weights_t).T + self.bias[:, None]
        return np.clip(expit(z), PROB_CLIP, 1.0 - PROB_CLIP)

    def predict_proba_many(self, X: sparse.csr_matrix) -> np.ndarray:
        return self.member_proba(X).mean(axis=0)

    def predict_proba(self, query: Query) -> float:
        return float(self.predict_proba_many(self.featurize([query.text]))[0])

    def variance_score(self, query: Query) -> float:
        """Population variance of the member probabilities for ``query``."""
        return float(self.member_proba(self.featurize([query.text])).var(axis=0)[0])

    def predict(self, X: sparse.csr_matrix) -> np.ndarray:
        return (self.predict_proba_many(X) >= 0.5).astype(np.int64)

    # training ------------------------------------------------------------

    def replicate_weights(self, texts: Sequence[str]) -> np.ndarray:
        """``(l, n)`` Poisson(1) bootstrap weights keyed by member and text."""
        out = np.empty((self.l, len(texts)))
        for i, text in enumerate(texts):
            column = self._replicate_cache.get(text)
            if column is None:
                column = np.array(
                    [_poisson1(hash64(text, derive_seed(self.seed, "bag", m)) / 2.0**64) for m in range(self.l)]
                )
                self._replicate_cache[text] = column
            out[:, i] = column
        return out

    def fit(self, examples: Sequence[tuple[Query, Label]], warm_start: bool = False) -> None:
        """Fit every member to convergence on its bootstrap replicate."""
        texts = [q.text for q, _ in examples]
        y = np.fromiter((int(label) for _, label in examples), dtype=np.float64, count=len(examples))
        X = self.featurize(texts)
        active = np.unique(X.indices)
        Xa = X[:, active].tocsr()
        replicate = self.replicate_weights(texts)
        for member in range(self.l):
            if warm_start:
                x0 = np.append(self.weights[member, active], self.bias[member])
            else:
                x0 = np.zeros(active.size + 1)
            result = optimize.minimize(
                member_loss_and_grad,
                x0,
                args=(Xa, y, replicate[member], self.l2),
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": 1000, "gtol": 1e-7},
            )
            self.weights[member].fill(0.0)
            self.weights[member, active] = result.x[:-1]
            self.bias[member] = result.x[-1]

    def refit(self) -> None:
        examples = [(Query(t), label) for t, label in self.labeled.items()]
        self.fit(examples, warm_start=True)

    def update(self, query: Query, label: Label, step: int | None = None) -> None:
        """One gradient step per member on the newly labelled example.

        Only the weights of the example's features move. The intercept is left
        to :meth:`refit`: single noisy labels would otherwise drag it around and
        flip predictions for unrelated queries.
        """
        label = Label(label)
        x = self.featurize([query.text])
        cols, vals = x.indices, x.data
        target = float(label)
        for member in range(self.l):
            z = float(self.weights[member, cols] @ vals) + self.bias[member]
            g = expit(z) - target
            self.weights[member, cols] -= self.learning_rate * g * vals
        self.labeled[query.text] = label
        step = len(self.training_log) if step is None else step
        self.training_log.append((hash64(query.text), int(label), step))

    # persistence ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Header, then biases and member weights as little-endian float32."""
        header = _CHECKPOINT_HEADER.pack(
            _CHECKPOINT_MAGIC, _CHECKPOINT_VERSION, self.feature_dim, self.l, self.l2
        )
        seed = struct.pack("<Q", self.seed & MASK64)
        return header + seed + self.bias.astype("<f4").tobytes() + self.weights.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> Ensemble:
        magic, version, feature_dim, l, l2 = _CHECKPOINT_HEADER.unpack_from(blob)
        if magic != _CHECKPOINT_MAGIC or version != _CHECKPOINT_VERSION:
            raise ConfigError("not a model checkpoint of a supported version")
        offset = _CHECKPOINT_HEADER.size
        (seed,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        expected = offset + 4 * l * (feature_dim + 1)
        if len(blob) != expected:
            raise ConfigError(f"checkpoint has {len(blob)} bytes, expected {expected}")
        model = cls(l=l, feature_dim=feature_dim, l2=l2, seed=seed)
        model.bias = np.frombuffer(blob, "<f4", l, offset).astype(np.float64)
        offset += 4 * l
        model.weights = (
            np.frombuffer(blob, "<f4", l * feature_dim, offset).astype(np.float64).reshape(l, feature_dim)
        )
        return model


def bootstrap(
    golden: Sequence[tuple[Query, Label]],
    l: int = DEFAULT_MEMBERS,
    seed: int = 0,
    *,
    feature_dim: int = DEFAULT_FEATURE_DIM,
    l2: float = 1.0,
    learning_rate: float = 0.1,
) -> Ensemble:
    """Train an ensemble on the golden labelled set."""
    if not golden:
        raise ConfigError("the golden set is empty")
    labels = {int(label) for _, label in golden}
    if len(labels) < 2:
        raise ConfigError("the golden set must contain both labels")
    model = Ensemble(l=l, feature_dim=feature_dim, l2=l2, learning_rate=learning_rate, seed=seed)
    model.fit(golden)
    for query, label in golden:
        model.labeled[query.text] = Label(label)
    return model


def next_example(
    pool: RankedExamplePool, model: Ensemble, strategy: Strategy = Strategy.LEAST_CONFIDENCE
) -> PoolEntry | None:
    """Remaining pool entry with the highest acquisition score, or ``None`` if exhausted.

    Ties go to the entry ranked earlier in the pool (higher variance, then
    lower query hash).
    """
    remaining = pool.remaining_indices()
    if remaining.size == 0:
        return None
    X = pool.features(model)[remaining]
    member_p = model.member_proba(X)
    scores = acquisition_scores(member_p.mean(axis=0), member_p, Strategy(strategy))
    # argmax returns the first maximum and remaining is in pool order
    return pool.entries[int(remaining[int(np.argmax(scores))])]
