"""Watermark-removal attacks and their cost accounting.

Attacks never touch key material: they receive an opaque injector (the
watermarked generation step, standing in for query access to a provider)
and post-process or re-drive generation from the outside, which is exactly
the attacker position the schemes assume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ParameterError, ValidationError
from .keys import round_half_up
from .models import Model, generate, next_distribution, GenerationContext


@dataclass(frozen=True)
class EmojiAttackResult:
    raw: list[int]
    stripped: list[int]
    separator_token: int


def emoji_attack(
    model: Model,
    separator_token: int,
    prompt: Sequence[int],
    injector,
    max_len: int,
) -> EmojiAttackResult:
    """Interleave a removable separator after every generated token.

    Simulates instructing the model to emit a separator between words: each
    content token is sampled through the watermark injector with the full
    separator-laden context (so the watermark's context chaining runs
    through separators), then the separator is forced into the stream.
    Stripping the separators afterwards leaves content tokens whose seeding
    predecessors are gone. `max_len` counts content tokens.
    """
    if not 0 <= separator_token < model.vocab_size:
        raise ValidationError(f"separator token out of vocabulary: {separator_token}")
    if max_len < 1:
        raise ParameterError("max_len must be >= 1")
    session = GenerationContext(prompt=tuple(prompt))
    raw: list[int] = []
    for _ in range(max_len):
        p = next_distribution(model, session)
        token = int(injector(p, session.tokens))
        raw.append(token)
        session.generated.append(token)
        injector.observe(separator_token)
        raw.append(separator_token)
        session.generated.append(separator_token)
    stripped = [t for t in raw if t != separator_token]
    return EmojiAttackResult(raw=raw, stripped=stripped, separator_token=separator_token)


@dataclass(frozen=True)
class PrefixAttackResult:
    tokens: list[int]
    prompts_issued: int


def prefix_specification_attack(
    model: Model,
    injector_factory: Callable[[], Callable],
    prompt: Sequence[int],
    max_len: int,
    terminal_token: int | None = None,
) -> PrefixAttackResult:
    """Regenerate one token per prompt so injection state never accumulates.

    Every step opens a fresh session whose prompt is the concatenated output
    so far, resetting the injector; `prompts_issued` counts model sessions
    and stands in for the cost asymmetry against single-prompt generation
    (max_len prompts versus one).
    """
    if max_len < 1:
        raise ParameterError("max_len must be >= 1")
    context = list(prompt)
    tokens: list[int] = []
    prompts_issued = 0
    for _ in range(max_len):
        injector = injector_factory()
        step = generate(model, context, injector, max_len=1)
        prompts_issued += 1
        token = step[0]
        tokens.append(token)
        context.append(token)
        if terminal_token is not None and token == terminal_token:
            break
    return PrefixAttackResult(tokens=tokens, prompts_issued=prompts_issued)


def substitution_attack(
    text: Sequence[int],
    fraction: float,
    vocab_size: int,
    rng: np.random.Generator,
) -> list[int]:
    """Replace a fraction of positions with uniformly random vocabulary tokens."""
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"fraction must be in [0, 1], got {fraction}")
    out = list(text)
    n_replace = round_half_up(fraction * len(out))
    if n_replace == 0:
        return out
    positions = rng.choice(len(out), size=n_replace, replace=False)
    for pos in positions:
        out[pos] = int(rng.integers(0, vocab_size))
    return out
