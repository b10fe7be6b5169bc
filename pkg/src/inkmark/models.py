"""Autoregressive token-distribution sources used as desk-scale model stand-ins.

A model is anything with a `vocab_size` attribute and a
``next_distribution(context) -> np.ndarray`` method returning a valid
probability vector over the vocabulary. Two concrete sources are provided:
additively smoothed n-gram models trained on text, and synthetic models
emitting one fixed, analytically tractable distribution at every step.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .errors import ParameterError, ValidationError

SIMPLEX_ATOL = 1e-9

_WORD_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize_words(text: str) -> list[str]:
    """Whitespace-and-punctuation word tokenizer."""
    return _WORD_RE.findall(text)


def tokenize_bytes(text: str) -> list[str]:
    """Byte-level fallback: one token per UTF-8 byte."""
    return [f"<0x{b:02x}>" for b in text.encode("utf-8")]


TOKENIZERS: dict[str, Callable[[str], list[str]]] = {
    "words": tokenize_words,
    "bytes": tokenize_bytes,
}


class Vocabulary:
    """Dense bijection between token strings and ids in [0, size)."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValidationError("vocabulary tokens must be distinct")
        if not self.tokens:
            raise ValidationError("vocabulary must be non-empty")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise ValidationError(f"token not in vocabulary: {token!r}") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < self.size:
            raise ValidationError(f"token id out of range: {token_id}")
        return self.tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    @classmethod
    def from_corpus_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        # Sorted for run-to-run and cross-platform stability.
        return cls(sorted(set(tokens)))


def validate_distribution(p: np.ndarray) -> np.ndarray:
    """Check the probability-simplex invariants and return p as float64."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError("distribution must be a non-empty vector")
    if np.any(p < 0):
        raise ValidationError("distribution has negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > SIMPLEX_ATOL:
        raise ValidationError(f"distribution sums to {total}, not 1")
    return p


@dataclass
class GenerationContext:
    """One generation session: prompt plus tokens emitted so far."""

    prompt: tuple[int, ...]
    generated: list[int] = field(default_factory=list)

    @property
    def step(self) -> int:
        return len(self.generated)

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.prompt + tuple(self.generated)


class Model(Protocol):
    vocab_size: int

    def next_distribution(self, context: Sequence[int]) -> np.ndarray: ...


class SyntheticModel:
    """Context-free source: mass `p_star` on one token, remainder uniform.

    Shannon and spike entropies of every step are analytically computable,
    which makes this the controlled-entropy source for the experiment
    harness.
    """

    def __init__(self, p_star: float, vocab_size: int, star_token: int = 0):
        if vocab_size < 1:
            raise ParameterError("vocab_size must be >= 1")
        if not (1.0 / vocab_size) <= p_star <= 1.0:
            raise ParameterError(
                f"p_star must be in [1/vocab_size, 1] = "
                f"[{1.0 / vocab_size:.6g}, 1], got {p_star}"
            )
        if not 0 <= star_token < vocab_size:
            raise ParameterError("star_token out of vocabulary range")
        self.p_star = float(p_star)
        self.vocab_size = int(vocab_size)
        self.star_token = int(star_token)
        if vocab_size == 1:
            dist = np.ones(1)
        else:
            rest = (1.0 - self.p_star) / (vocab_size - 1)
            dist = np.full(vocab_size, rest)
            dist[star_token] = self.p_star
        self._dist = dist

    def next_distribution(self, context: Sequence[int]) -> np.ndarray:
        return self._dist.copy()


class NgramModel:
    """Additively smoothed n-gram model over a fixed vocabulary.

    The conditional distribution of the next token given the last
    ``order - 1`` tokens is ``(count + smoothing) / (total + smoothing * V)``.
    Contexts never seen in training therefore fall back to the uniform
    distribution (smoothing-only mass). No backoff to shorter contexts.
    """

    FORMAT_VERSION = 1

    def __init__(
        self,
        vocab: Vocabulary,
        order: int,
        smoothing: float,
        counts: dict[tuple[int, ...], dict[int, int]],
        tokenizer: str = "words",
    ):
        if order < 1:
            raise ParameterError("order must be >= 1")
        if smoothing <= 0:
            raise ParameterError("smoothing must be > 0")
        self.vocab = vocab
        self.order = order
        self.smoothing = float(smoothing)
        self.counts = counts
        self.tokenizer = tokenizer

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    def _context_key(self, context: Sequence[int]) -> tuple[int, ...]:
        width = self.order - 1
        return tuple(context[len(context) - width :]) if width else ()

    def next_distribution(self, context: Sequence[int]) -> np.ndarray:
        v = self.vocab.size
        dist = np.full(v, self.smoothing)
        bucket = self.counts.get(self._context_key(context))
        if bucket:
            for token_id, count in bucket.items():
                dist[token_id] += count
        dist /= dist.sum()
        return dist

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": self.FORMAT_VERSION,
            "order": self.order,
            "smoothing": self.smoothing,
            "tokenizer": self.tokenizer,
            "vocabulary": self.vocab.tokens,
            "counts": {
                " ".join(map(str, ctx)): {str(t): c for t, c in sorted(bucket.items())}
                for ctx, bucket in sorted(self.counts.items())
            },
        }
        Path(path).write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "NgramModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        version = payload.get("format_version")
        if version != cls.FORMAT_VERSION:
            raise ValidationError(f"unsupported model format version: {version}")
        counts = {
            tuple(map(int, ctx.split())) if ctx else (): {
                int(t): int(c) for t, c in bucket.items()
            }
            for ctx, bucket in payload["counts"].items()
        }
        return cls(
            vocab=Vocabulary(payload["vocabulary"]),
            order=int(payload["order"]),
            smoothing=float(payload["smoothing"]),
            counts=counts,
            tokenizer=payload.get("tokenizer", "words"),
        )


def train_ngram(
    corpus: str | Iterable[str],
    order: int,
    smoothing: float,
    tokenizer: str = "words",
) -> NgramModel:
    """Train an n-gram model; `corpus` is raw text or pre-split token strings."""
    if order < 1:
        raise ParameterError("order must be >= 1")
    if smoothing <= 0:
        raise ParameterError("smoothing must be > 0")
    if isinstance(corpus, str):
        tokens = TOKENIZERS[tokenizer](corpus)
    else:
        tokens = list(corpus)
    if not tokens:
        raise ValidationError("corpus is empty after tokenization")
    vocab = Vocabulary.from_corpus_tokens(tokens)
    ids = vocab.encode(tokens)
    width = order - 1
    counts: dict[tuple[int, ...], dict[int, int]] = {}
    for i in range(width, len(ids)):
        ctx = tuple(ids[i - width : i])
        bucket = counts.setdefault(ctx, {})
        bucket[ids[i]] = bucket.get(ids[i], 0) + 1
    return NgramModel(vocab, order, smoothing, counts, tokenizer=tokenizer)


def next_distribution(model: Model, context: GenerationContext) -> np.ndarray:
    """Distribution over the next token for a generation session."""
    tokens = context.tokens
    for t in tokens:
        if not 0 <= t < model.vocab_size:
            raise ValidationError(f"context token id out of range: {t}")
    return validate_distribution(model.next_distribution(tokens))


def sample_from(p: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from p with one uniform value; deterministic in u."""
    cum = np.cumsum(p)
    idx = int(np.searchsorted(cum, u, side="right"))
    return min(idx, p.size - 1)


class PlainSampler:
    """Baseline sampling step: draw from the model distribution unchanged."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def __call__(self, p: np.ndarray, context: Sequence[int]) -> int:
        return sample_from(p, self.rng.random())

    def observe(self, token: int) -> None:
        # No internal state to keep aligned with forced tokens.
        pass


def generate(
    model: Model,
    prompt: Sequence[int],
    sampler: Callable[[np.ndarray, Sequence[int]], int],
    max_len: int,
    terminal_token: int | None = None,
) -> list[int]:
    """Autoregressive sampling loop shared by plain and watermarked generation.

    The sampler is any step function mapping (distribution, context tokens)
    to the chosen token id; watermark injectors plug in here.
    """
    if max_len < 1:
        raise ParameterError("max_len must be >= 1")
    session = GenerationContext(prompt=tuple(prompt))
    for _ in range(max_len):
        p = next_distribution(model, session)
        token = int(sampler(p, session.tokens))
        if not 0 <= token < model.vocab_size:
            raise ValidationError(f"sampler produced out-of-range token: {token}")
        session.generated.append(token)
        if terminal_token is not None and token == terminal_token:
            break
    return session.generated
