"""Red/green-list watermarking: green-set injection and z-score detection.

Injection partitions the vocabulary pseudorandomly per step, seeded by the
preceding `h` tokens. The hard rule samples only green tokens; the soft rule
multiplies green-token probabilities by exp(delta) before renormalizing, so
low-entropy steps stay essentially unchanged while high-entropy steps pick
up a detectable green bias. Detection counts green tokens and compares the
count to its null binomial distribution via a one-sided z-score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import stats

from ._stats import wilson_interval
from .entropy import spike_entropy
from .errors import InkmarkError, ParameterError, ValidationError
from .keys import PartitionCache, WatermarkKey
from .models import Model, PlainSampler, generate, sample_from, validate_distribution

EXACT_PVALUE_MAX_TOTAL = 10_000


class Mode(str, Enum):
    HARD = "hard"
    SOFT = "soft"


@dataclass(frozen=True)
class RedGreenParams:
    gamma: float = 0.5
    delta: float = 2.0
    h: int = 1
    mode: Mode = Mode.SOFT

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ParameterError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.delta < 0.0:
            raise ParameterError(f"delta must be >= 0, got {self.delta}")
        if self.h < 1:
            raise ParameterError(f"context width h must be >= 1, got {self.h}")
        if not isinstance(self.mode, Mode):
            object.__setattr__(self, "mode", Mode(self.mode))

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "delta": self.delta,
            "h": self.h,
            "mode": self.mode.value,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RedGreenParams":
        return cls(
            gamma=float(payload.get("gamma", 0.5)),
            delta=float(payload.get("delta", 2.0)),
            h=int(payload.get("h", 1)),
            mode=Mode(payload.get("mode", "soft")),
        )


@dataclass(frozen=True)
class RedGreenDetection:
    green_count: int
    total: int
    z_score: float
    p_value: float
    verdict: bool
    threshold_sigmas: float

    def to_report(self, params: RedGreenParams) -> dict:
        return {
            "scheme": "redgreen",
            "verdict": self.verdict,
            "z_score": self.z_score,
            "p_value": self.p_value,
            "green_count": self.green_count,
            "total": self.total,
            "threshold_sigmas": self.threshold_sigmas,
            "params": params.to_dict(),
        }


def boost_distribution(p: np.ndarray, mask: np.ndarray, params: RedGreenParams) -> np.ndarray:
    """Per-step distribution after applying the hard or soft green rule."""
    p = validate_distribution(p)
    if params.mode is Mode.HARD:
        green_mass = float(p[mask].sum())
        if green_mass <= 0.0:
            raise InkmarkError("no green support")
        out = np.where(mask, p, 0.0)
        return out / green_mass
    if params.delta == 0.0:
        return p
    out = np.where(mask, p * math.exp(params.delta), p)
    return out / out.sum()


class RedGreenInjector:
    """Sampling step function that injects the red/green watermark."""

    def __init__(
        self,
        key: WatermarkKey,
        params: RedGreenParams,
        vocab_size: int,
        rng: np.random.Generator,
    ):
        self.key = key
        self.params = params
        self.rng = rng
        self.cache = PartitionCache(key, params.gamma, vocab_size)

    def __call__(self, p: np.ndarray, context: Sequence[int]) -> int:
        h = self.params.h
        if len(context) < h:
            raise ValidationError(
                f"context has {len(context)} tokens, need at least h = {h}"
            )
        mask = self.cache.mask(tuple(context[len(context) - h :]))
        boosted = boost_distribution(p, mask, self.params)
        return sample_from(boosted, self.rng.random())

    def observe(self, token: int) -> None:
        # Stateless per step; forced tokens need no bookkeeping.
        pass


def count_green(
    text: Sequence[int],
    key: WatermarkKey,
    gamma: float,
    h: int = 1,
    vocab_size: int | None = None,
    cache: PartitionCache | None = None,
) -> tuple[int, int]:
    """Count green tokens among positions h..len-1, each seeded by its h predecessors."""
    if len(text) <= h:
        raise ValidationError(
            f"insufficient tokens: need more than h = {h}, got {len(text)}"
        )
    if cache is None:
        if vocab_size is None:
            vocab_size = max(text) + 1
        cache = PartitionCache(key, gamma, vocab_size)
    green = 0
    text = list(text)
    for t in range(h, len(text)):
        mask = cache.mask(tuple(text[t - h : t]))
        if mask[text[t]]:
            green += 1
    return green, len(text) - h


def detect(
    text: Sequence[int],
    key: WatermarkKey,
    params: RedGreenParams,
    threshold_sigmas: float = 4.0,
    vocab_size: int | None = None,
    exact: bool = False,
    cache: PartitionCache | None = None,
) -> RedGreenDetection:
    """One-sided z-test of the green count against the gamma null.

    `exact` switches the p-value to the exact binomial tail; available for
    totals up to 10^4, where it stays cheap.
    """
    green, total = count_green(
        text, key, params.gamma, params.h, vocab_size=vocab_size, cache=cache
    )
    gamma = params.gamma
    z = (green - gamma * total) / math.sqrt(total * gamma * (1.0 - gamma))
    if exact:
        if total > EXACT_PVALUE_MAX_TOTAL:
            raise ParameterError(
                f"exact binomial tail limited to totals <= {EXACT_PVALUE_MAX_TOTAL}"
            )
        p_value = float(stats.binom.sf(green - 1, total, gamma))
    else:
        p_value = float(stats.norm.sf(z))
    return RedGreenDetection(
        green_count=green,
        total=total,
        z_score=z,
        p_value=p_value,
        verdict=z >= threshold_sigmas,
        threshold_sigmas=threshold_sigmas,
    )


@dataclass(frozen=True)
class WindowScan:
    best_start: int
    window_len: int
    detection: RedGreenDetection
    n_windows: int


def detect_windows(
    text: Sequence[int],
    key: WatermarkKey,
    params: RedGreenParams,
    window_len: int,
    threshold_sigmas: float = 4.0,
    stride: int = 1,
    vocab_size: int | None = None,
) -> WindowScan:
    """Sliding-window scan for a watermarked span embedded in larger text.

    Window length and stride are caller policy; the best (highest z) window
    is reported. Every window pays its own multiple-comparison cost, so
    callers should pick thresholds accordingly.
    """
    if window_len <= params.h:
        raise ParameterError(f"window_len must exceed h = {params.h}")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    text = list(text)
    if len(text) < window_len:
        raise ValidationError("text shorter than one window")
    if vocab_size is None:
        vocab_size = max(text) + 1
    cache = PartitionCache(key, params.gamma, vocab_size)
    best: RedGreenDetection | None = None
    best_start = 0
    n_windows = 0
    for start in range(0, len(text) - window_len + 1, stride):
        det = detect(
            text[start : start + window_len],
            key,
            params,
            threshold_sigmas,
            vocab_size=vocab_size,
            cache=cache,
        )
        n_windows += 1
        if best is None or det.z_score > best.z_score:
            best, best_start = det, start
    assert best is not None
    return WindowScan(
        best_start=best_start, window_len=window_len, detection=best, n_windows=n_windows
    )


class _SpikeRecordingSampler:
    """Wraps a step sampler and accumulates spike entropy of the raw p_t stream."""

    def __init__(self, inner, modulus: float):
        self.inner = inner
        self.modulus = modulus
        self.total = 0.0
        self.count = 0

    def __call__(self, p: np.ndarray, context: Sequence[int]) -> int:
        self.total += spike_entropy(p, self.modulus)
        self.count += 1
        return self.inner(p, context)


def estimate_error_rates(
    model: Model,
    key: WatermarkKey,
    params: RedGreenParams,
    n_trials: int,
    text_len: int,
    threshold_sigmas: float = 4.0,
    spike_modulus: float = 1.0,
    prompt: Sequence[int] = (0,),
    seed: int | None = None,
    confidence: float = 0.95,
) -> dict:
    """Monte Carlo FPR/FNR at a z threshold, with Wilson intervals.

    Watermarked and plain texts are generated from the same model and
    prompt; the run's average spike entropy is measured on the raw
    pre-injection distributions of the watermarked generations.
    """
    if n_trials < 100:
        raise ParameterError("n_trials must be >= 100")
    if len(prompt) < params.h:
        raise ParameterError("prompt must provide at least h seed tokens")
    rng = np.random.default_rng(seed)
    cache = PartitionCache(key, params.gamma, model.vocab_size)

    injector = RedGreenInjector(key, params, model.vocab_size, rng)
    recorder = _SpikeRecordingSampler(injector, spike_modulus)
    missed = 0
    for _ in range(n_trials):
        text = generate(model, prompt, recorder, text_len)
        det = detect(text, key, params, threshold_sigmas, model.vocab_size, cache=cache)
        if not det.verdict:
            missed += 1

    false_alarms = 0
    plain = PlainSampler(rng)
    for _ in range(n_trials):
        text = generate(model, prompt, plain, text_len)
        det = detect(text, key, params, threshold_sigmas, model.vocab_size, cache=cache)
        if det.verdict:
            false_alarms += 1

    return {
        "fnr": missed / n_trials,
        "fpr": false_alarms / n_trials,
        "fnr_ci": wilson_interval(missed, n_trials, confidence),
        "fpr_ci": wilson_interval(false_alarms, n_trials, confidence),
        "avg_spike_entropy": recorder.total / recorder.count,
        "spike_modulus": spike_modulus,
        "n_trials": n_trials,
        "text_len": text_len,
        "threshold_sigmas": threshold_sigmas,
    }
