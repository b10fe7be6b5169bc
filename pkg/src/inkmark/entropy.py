"""Entropy quantities: Shannon, spike, and a corpus entropy-rate estimator.

All user-facing values are in bits (base-2 logs); the unit travels with
every estimate. The corpus estimator is the increasing-window match-length
construction: with `lam[i]` the length of the shortest substring starting at
position i that does not occur starting anywhere before i (capped at the
remaining length, first position skipped),

    H_hat = n * log2(n) / sum(lam[1:])   [bits per character]

Match lengths are computed exactly via a suffix array, Kasai LCP values and
range-minimum queries; a brute-force oracle in the test suite checks the
construction on small strings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ParameterError, ValidationError
from .models import validate_distribution


class EntropyUnit(str, Enum):
    BITS_PER_TOKEN = "bits_per_token"
    NATS_PER_TOKEN = "nats_per_token"
    BITS_PER_CHARACTER = "bits_per_character"


class EstimatorKind(str, Enum):
    EXACT = "exact"
    MATCH_LENGTH = "matchlength"


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    unit: EntropyUnit
    estimator: EstimatorKind
    n_samples: int

    def __post_init__(self):
        if self.value < 0:
            raise ValidationError("entropy estimate must be non-negative")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "unit": self.unit.value,
            "estimator": self.estimator.value,
            "n_samples": self.n_samples,
        }


def shannon_information(p: np.ndarray, x: int) -> float:
    """Surprise of outcome x under p, in bits: log2(1 / p(x))."""
    p = validate_distribution(p)
    if not 0 <= x < p.size:
        raise ValidationError(f"outcome {x} out of range for distribution")
    px = float(p[x])
    if px <= 0.0:
        raise ParameterError("zero-probability outcome")
    return -math.log2(px)


def shannon_entropy(p: np.ndarray) -> float:
    """H(p) = -sum p log2 p, with the 0 * log 0 = 0 convention."""
    p = validate_distribution(p)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def average_entropy(ps: Sequence[np.ndarray]) -> float:
    """Arithmetic mean of shannon_entropy over a sequence of distributions."""
    if len(ps) == 0:
        raise ParameterError("average over empty sequence of distributions")
    return sum(shannon_entropy(p) for p in ps) / len(ps)


def spike_entropy(p: np.ndarray, z: float) -> float:
    """S(p, z) = sum p(x) / (1 + z * p(x)); minimal at point masses."""
    if z <= 0:
        raise ParameterError(f"spike modulus must be > 0, got {z}")
    p = validate_distribution(p)
    return float((p / (1.0 + z * p)).sum())


def average_spike_entropy(ps: Sequence[np.ndarray], z: float) -> float:
    if len(ps) == 0:
        raise ParameterError("average over empty sequence of distributions")
    return sum(spike_entropy(p, z) for p in ps) / len(ps)


# ---------------------------------------------------------------------------
# Match-length entropy-rate estimation


def _suffix_array(codes: np.ndarray) -> np.ndarray:
    """Suffix array by prefix doubling (O(n log^2 n), numpy sorts)."""
    n = codes.size
    rank = np.unique(codes, return_inverse=True)[1].astype(np.int64)
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    k = 1
    while True:
        second = np.full(n, -1, dtype=np.int64)
        if k < n:
            second[: n - k] = rank[k:]
        order = np.lexsort((second, rank))
        r1, r2 = rank[order], second[order]
        bump = np.empty(n, dtype=np.int64)
        bump[0] = 0
        bump[1:] = (r1[1:] != r1[:-1]) | (r2[1:] != r2[:-1])
        new_rank = np.cumsum(bump)
        rank = np.empty(n, dtype=np.int64)
        rank[order] = new_rank
        if new_rank[-1] == n - 1:
            break
        k *= 2
    sa = np.empty(n, dtype=np.int64)
    sa[rank] = np.arange(n)
    return sa


def _lcp_array(codes: np.ndarray, sa: np.ndarray) -> np.ndarray:
    """Kasai: lcp[r] = longest common prefix of suffixes sa[r-1] and sa[r]."""
    n = codes.size
    rank = np.empty(n, dtype=np.int64)
    rank[sa] = np.arange(n)
    lcp = np.zeros(n, dtype=np.int64)
    h = 0
    for i in range(n):
        r = rank[i]
        if r == 0:
            h = 0
            continue
        j = sa[r - 1]
        limit = n - max(i, j)
        while h < limit and codes[i + h] == codes[j + h]:
            h += 1
        lcp[r] = h
        if h:
            h -= 1
    return lcp


class _RangeMin:
    """Sparse-table RMQ over an int array; query(l, r) is inclusive."""

    def __init__(self, values: np.ndarray):
        n = values.size
        levels = max(1, n.bit_length())
        self._table = [values]
        for k in range(1, levels):
            span = 1 << k
            if span > n:
                break
            prev = self._table[k - 1]
            half = 1 << (k - 1)
            self._table.append(np.minimum(prev[: n - span + 1], prev[half : n - span + 1 + half]))

    def query(self, l: int, r: int) -> int:
        k = (r - l + 1).bit_length() - 1
        row = self._table[k]
        return int(min(row[l], row[r - (1 << k) + 1]))


def match_lengths(codes: np.ndarray) -> np.ndarray:
    """lam[i]: shortest substring at i with no occurrence starting before i.

    Equals one plus the longest match between suffix i and any suffix with a
    smaller start (occurrences may overlap position i), capped at the
    remaining length n - i. lam[0] is fixed to 0 and excluded from use.
    """
    n = codes.size
    lam = np.zeros(n, dtype=np.int64)
    if n < 2:
        return lam
    sa = _suffix_array(codes)
    lcp = _lcp_array(codes, sa)
    rmq = _RangeMin(lcp)

    # Nearest rank on each side whose suffix starts earlier in the text.
    psv = np.full(n, -1, dtype=np.int64)
    nsv = np.full(n, -1, dtype=np.int64)
    stack: list[int] = []
    for r in range(n):
        while stack and sa[stack[-1]] > sa[r]:
            stack.pop()
        if stack:
            psv[r] = stack[-1]
        stack.append(r)
    stack.clear()
    for r in range(n - 1, -1, -1):
        while stack and sa[stack[-1]] > sa[r]:
            stack.pop()
        if stack:
            nsv[r] = stack[-1]
        stack.append(r)

    for r in range(n):
        i = int(sa[r])
        if i == 0:
            continue
        best = 0
        if psv[r] != -1:
            best = rmq.query(psv[r] + 1, r)
        if nsv[r] != -1:
            best = max(best, rmq.query(r + 1, nsv[r]))
        lam[i] = min(best + 1, n - i)
    return lam


def estimate_entropy_rate(text: str | bytes) -> EntropyEstimate:
    """Increasing-window match-length entropy-rate estimate in bits/character.

    Invariant under any bijective renaming of the characters, since only
    equality structure enters the match lengths.
    """
    if isinstance(text, str):
        codes = np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)
    else:
        codes = np.frombuffer(bytes(text), dtype=np.uint8)
    n = codes.size
    if n < 2:
        raise ValidationError("text too short for entropy-rate estimation (need >= 2)")
    lam = match_lengths(np.ascontiguousarray(codes))
    value = n * math.log2(n) / float(lam[1:].sum())
    return EntropyEstimate(
        value=value,
        unit=EntropyUnit.BITS_PER_CHARACTER,
        estimator=EstimatorKind.MATCH_LENGTH,
        n_samples=n,
    )
