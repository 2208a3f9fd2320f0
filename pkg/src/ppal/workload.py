"""Synthetic query corpora shaped like a voice-assistant intent log.

Distinct queries get Zipf-distributed multiplicities: every distinct query
occurs at least once and the remaining occurrences are spread over frequency
ranks with probability proportional to ``rank ** -s``. When no exponent is
given, ``s`` is found by bisection so that the expected share of distinct
queries seen exactly once matches ``singleton_fraction_target``.

Query text is built from pseudo-words. Each query belongs to an intent whose
carrier phrase it contains, followed by a few label-neutral slot words; the
binary label is a property of the intent. Labels live in a separate
``truth`` mapping so that code holding only ``Query`` objects cannot read them.
"""

from __future__ import annotations

import enum
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ppal.errors import ConfigError
from ppal.hashing import hash64

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")
_SYLLABLES = tuple(o + v for o in _ONSETS for v in _VOWELS)


class Label(enum.IntEnum):
    NEGATIVE = 0
    POSITIVE = 1

    def flipped(self) -> Label:
        return Label(1 - self)

    @classmethod
    def parse(cls, text: str) -> Label:
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ConfigError(f"unknown label {text!r}") from None


@dataclass(frozen=True)
class Query:
    """One user utterance. The whole text is the quasi-identifier."""

    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ConfigError("query text must be non-empty")
        if "\t" in self.text or "\n" in self.text:
            raise ConfigError("query text must not contain tabs or newlines")

    @property
    def key(self) -> int:
        return hash64(self.text)


@dataclass(frozen=True)
class CorpusSpec:
    n_total: int = 250_000
    n_distinct_target: int = 5_800
    zipf_s: float | None = None
    positive_fraction: float = 0.63
    singleton_fraction_target: float = 0.60
    seed: int = 0
    n_intents: int = 400
    slot_vocab: int = 3_000
    max_slots: int = 3

    def __post_init__(self) -> None:
        if self.n_distinct_target < 1 or self.n_total < 1:
            raise ConfigError("n_total and n_distinct_target must be positive")
        if self.n_distinct_target > self.n_total:
            raise ConfigError(
                f"n_distinct_target ({self.n_distinct_target}) exceeds n_total ({self.n_total})"
            )
        for name in ("positive_fraction", "singleton_fraction_target"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if self.zipf_s is not None and self.zipf_s < 0:
            raise ConfigError(f"zipf_s must be >= 0, got {self.zipf_s}")
        if self.n_intents < 2 or self.max_slots < 0 or self.slot_vocab < 1:
            raise ConfigError("n_intents >= 2, max_slots >= 0 and slot_vocab >= 1 are required")


@dataclass
class Corpus:
    spec: CorpusSpec
    stream: list[Query]
    truth: dict[str, Label] = field(repr=False)
    zipf_s: float

    def counts(self) -> Counter[str]:
        return Counter(q.text for q in self.stream)

    def distinct(self) -> list[Query]:
        """Distinct queries in order of first appearance."""
        seen: dict[str, Query] = {}
        for q in self.stream:
            seen.setdefault(q.text, q)
        return list(seen.values())


def _rank_weights(n: int, s: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -s
    return w / w.sum()


def expected_singleton_fraction(n_total: int, n_distinct: int, s: float) -> float:
    """Expected share of distinct queries with multiplicity exactly one."""
    extra = n_total - n_distinct
    if extra == 0:
        return 1.0
    p = _rank_weights(n_distinct, s)
    return float(np.mean(np.exp(extra * np.log1p(-p)))) if n_distinct > 1 else 0.0


def calibrate_zipf_s(
    n_total: int, n_distinct: int, target: float, tol: float = 0.05
) -> float:
    """Bisection for the exponent whose expected singleton share is ``target``.

    The share increases with ``s``; the reachable range is from the uniform
    case (``s = 0``) up to nearly all mass on rank 1.
    """
    lo, hi = 0.0, 8.0
    f_lo = expected_singleton_fraction(n_total, n_distinct, lo)
    f_hi = expected_singleton_fraction(n_total, n_distinct, hi)
    if not f_lo - tol <= target <= f_hi + tol:
        raise ConfigError(
            f"singleton fraction {target:.3f} is unreachable for n_total={n_total}, "
            f"n_distinct={n_distinct}: achievable range is [{f_lo:.3f}, {f_hi:.3f}]"
        )
    if target <= f_lo:
        return lo
    if target >= f_hi:
        return hi
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if expected_singleton_fraction(n_total, n_distinct, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break
    return 0.5 * (lo + hi)


def _word(index: int, rng: np.random.Generator) -> str:
    n_syll = 2 + int(rng.integers(0, 2))
    parts = []
    value = index
    for _ in range(n_syll):
        parts.append(_SYLLABLES[value % len(_SYLLABLES)])
        value //= len(_SYLLABLES)
    if value:
        parts.append(_SYLLABLES[value % len(_SYLLABLES)])
    return "".join(parts)


def _vocabulary(size: int, offset: int, rng: np.random.Generator) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    index = offset
    while len(words) < size:
        word = _word(index, rng)
        index += 1
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _assign_polarity(sizes: np.ndarray, target: float, rng: np.random.Generator) -> np.ndarray:
    """Positive/negative per intent so the size-weighted positive share tracks ``target``."""
    order = rng.permutation(len(sizes))
    positive = np.zeros(len(sizes), dtype=bool)
    pos_mass = 0.0
    total = 0.0
    for i in order:
        total += sizes[i]
        if pos_mass + sizes[i] <= target * total + 0.5 * sizes[i]:
            positive[i] = True
            pos_mass += sizes[i]
    return positive


def _texts(spec: CorpusSpec, rng: np.random.Generator) -> tuple[list[str], list[Label]]:
    n = spec.n_distinct_target
    n_intents = min(spec.n_intents, n)
    words = _vocabulary(2 * n_intents + spec.slot_vocab, 0, rng)
    carriers = [f"{words[2 * i]} {words[2 * i + 1]}" for i in range(n_intents)]
    slots = words[2 * n_intents :]
    slot_p = _rank_weights(len(slots), 1.0)

    # Every intent has its bare carrier phrase; other queries add slot words.
    intent_of = np.concatenate([np.arange(n_intents), rng.integers(0, n_intents, n - n_intents)])
    sizes = np.bincount(intent_of, minlength=n_intents).astype(np.float64)
    positive = _assign_polarity(sizes, spec.positive_fraction, rng)

    texts: list[str] = []
    labels: list[Label] = []
    seen: set[str] = set()
    for i, intent in enumerate(intent_of):
        if i < n_intents:
            text = carriers[intent]
        else:
            for _attempt in range(1000):
                n_slots = 1 + int(rng.integers(0, max(spec.max_slots, 1)))
                picks = rng.choice(len(slots), size=n_slots, p=slot_p)
                text = " ".join([carriers[intent], *(slots[j] for j in picks)])
                if text not in seen:
                    break
            else:
                raise ConfigError("could not generate enough distinct query texts; raise slot_vocab")
        seen.add(text)
        texts.append(text)
        labels.append(Label.POSITIVE if positive[intent] else Label.NEGATIVE)
    return texts, labels


def generate(spec: CorpusSpec) -> Corpus:
    """Generate a corpus stream; deterministic for a given spec."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_distinct_target
    extra = spec.n_total - n
    if extra == 0:
        s = spec.zipf_s if spec.zipf_s is not None else 0.0
    elif spec.zipf_s is None:
        s = calibrate_zipf_s(spec.n_total, n, spec.singleton_fraction_target)
    else:
        s = spec.zipf_s

    texts, labels = _texts(spec, rng)
    # Shorter texts (bare carrier phrases first) take the most frequent ranks.
    by_length = sorted(range(n), key=lambda i: (len(texts[i].split()), rng.random()))
    multiplicity = np.ones(n, dtype=np.int64)
    if extra:
        multiplicity += rng.multinomial(extra, _rank_weights(n, s))
    counts = np.empty(n, dtype=np.int64)
    counts[by_length] = multiplicity

    occurrence = rng.permutation(np.repeat(np.arange(n), counts))
    queries = [Query(t) for t in texts]
    stream = [queries[i] for i in occurrence]
    truth = dict(zip(texts, labels))
    return Corpus(spec=spec, stream=stream, truth=truth, zipf_s=s)


def singleton_fraction(stream: Iterable[Query]) -> float:
    counts = Counter(q.text for q in stream)
    if not counts:
        return 0.0
    return sum(1 for c in counts.values() if c == 1) / len(counts)


def write_corpus(stream: Iterable[Query], truth: Mapping[str, Label], path: str | Path) -> Path:
    """One occurrence per line: ``text<TAB>LABEL``."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for q in stream:
            fh.write(f"{q.text}\t{truth[q.text].name}\n")
    return path


def read_corpus(path: str | Path) -> tuple[list[Query], dict[str, Label]]:
    stream: list[Query] = []
    truth: dict[str, Label] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            text, sep, label = line.partition("\t")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'text<TAB>label'")
            parsed = Label.parse(label)
            if truth.setdefault(text, parsed) != parsed:
                raise ConfigError(f"{path}:{lineno}: conflicting labels for {text!r}")
            stream.append(Query(text))
    return stream, truth


def zipf_ks_distance(counts: Iterable[int], s: float) -> float:
    """Kolmogorov-Smirnov distance between the observed rank/mass profile and Zipf(s)."""
    c = np.sort(np.fromiter(counts, dtype=np.float64))[::-1]
    if c.size == 0:
        return 0.0
    observed = np.cumsum(c) / c.sum()
    expected = np.cumsum(_rank_weights(c.size, s))
    return float(np.max(np.abs(observed - expected)))

