"""Keyed pseudorandom primitives shared by both watermarking schemes.

Everything here is a pure function of (key, inputs). The uniform-draw
convention is fixed so that independent implementations agree bit for bit:
the context is framed as ``<u32 count> <u32 id> <u32 id> ...`` (all
little-endian), hashed with HMAC-SHA256 under the 32-byte secret, and the
first 8 digest bytes are read as a big-endian integer divided by 2^64.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import math
import secrets
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import KeyFormatError, ParameterError

SECRET_LEN = 32

# Domain separator so partition shuffles never reuse a uniform-draw value.
_PARTITION_TAG = b"partition:"


class SchemeId(str, Enum):
    RED_GREEN = "redgreen"
    BINARY = "binary"


@dataclass(frozen=True)
class WatermarkKey:
    """Secret key material identifying one provider's watermark."""

    secret: bytes
    provider_id: str
    scheme_id: SchemeId

    def __post_init__(self):
        if len(self.secret) != SECRET_LEN:
            raise KeyFormatError(
                f"secret must be exactly {SECRET_LEN} bytes, got {len(self.secret)}"
            )
        if not self.provider_id:
            raise KeyFormatError("provider_id must be non-empty")
        if not isinstance(self.scheme_id, SchemeId):
            object.__setattr__(self, "scheme_id", SchemeId(self.scheme_id))

    @classmethod
    def generate(
        cls,
        provider_id: str,
        scheme_id: SchemeId | str,
        rng: np.random.Generator | None = None,
    ) -> "WatermarkKey":
        """Create a fresh key; `rng` makes generation reproducible for tests."""
        if rng is None:
            secret = secrets.token_bytes(SECRET_LEN)
        else:
            secret = rng.bytes(SECRET_LEN)
        return cls(secret=secret, provider_id=provider_id, scheme_id=SchemeId(scheme_id))

    def to_dict(self, created_at: str | None = None) -> dict:
        return {
            "provider_id": self.provider_id,
            "scheme_id": self.scheme_id.value,
            "secret_hex": self.secret.hex(),
            "created_at": created_at
            or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "WatermarkKey":
        try:
            secret_hex = payload["secret_hex"]
            provider_id = payload["provider_id"]
            scheme_id = payload["scheme_id"]
        except (KeyError, TypeError) as exc:
            raise KeyFormatError(f"key payload missing field: {exc}") from exc
        if not isinstance(secret_hex, str) or len(secret_hex) != 2 * SECRET_LEN:
            raise KeyFormatError("secret_hex must be 64 hex characters")
        if secret_hex != secret_hex.lower():
            raise KeyFormatError("secret_hex must be lowercase")
        try:
            secret = bytes.fromhex(secret_hex)
        except ValueError as exc:
            raise KeyFormatError("secret_hex is not valid hex") from exc
        try:
            scheme = SchemeId(scheme_id)
        except ValueError as exc:
            raise KeyFormatError(f"unknown scheme_id {scheme_id!r}") from exc
        return cls(secret=secret, provider_id=provider_id, scheme_id=scheme)

    def save(self, path: str | Path, created_at: str | None = None) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(created_at=created_at), indent=2) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "WatermarkKey":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise KeyFormatError(f"key file is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)


def encode_context(context: Sequence[int]) -> bytes:
    """Canonical wire framing of a PRF context: u32 count, then u32 per id."""
    if len(context) == 0:
        raise ParameterError("empty PRF context")
    try:
        return struct.pack(f"<{len(context) + 1}I", len(context), *context)
    except struct.error as exc:
        raise ParameterError(f"context values must fit in uint32: {exc}") from exc


def uniform_from_bytes(key: WatermarkKey, payload: bytes) -> float:
    """Digest-to-float mapping over an already-encoded context payload."""
    digest = hmac.new(key.secret, payload, hashlib.sha256).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def prf_uniform(key: WatermarkKey, context: Sequence[int]) -> float:
    """Deterministic keyed map of a context to a uniform value in [0, 1)."""
    return uniform_from_bytes(key, encode_context(context))


def round_half_up(x: float) -> int:
    """Rounding convention used everywhere a fraction maps to a count."""
    return math.floor(x + 0.5)


def green_set_size(gamma: float, vocab_size: int) -> int:
    """Number of green tokens: round-half-up of gamma * vocab_size."""
    return round_half_up(gamma * vocab_size)


def prf_partition(
    key: WatermarkKey,
    context: Sequence[int],
    gamma: float,
    vocab_size: int,
) -> np.ndarray:
    """Keyed pseudorandom red/green split of the vocabulary.

    Returns a boolean membership mask of length `vocab_size` with exactly
    ``green_set_size(gamma, vocab_size)`` True entries: the first entries of
    a keyed deterministic shuffle of ``[0, vocab_size)`` seeded from
    HMAC-SHA256 over a domain-tagged copy of the canonical context encoding.
    """
    if not 0.0 < gamma < 1.0:
        raise ParameterError(f"gamma must be in (0, 1), got {gamma}")
    if vocab_size < 2:
        raise ParameterError(f"vocab_size must be >= 2, got {vocab_size}")
    digest = hmac.new(
        key.secret, _PARTITION_TAG + encode_context(context), hashlib.sha256
    ).digest()
    seed = int.from_bytes(digest[:8], "big")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(vocab_size)
    mask = np.zeros(vocab_size, dtype=bool)
    mask[perm[: green_set_size(gamma, vocab_size)]] = True
    return mask


class PartitionCache:
    """Memoizes partitions for one (key, gamma, vocab_size) configuration.

    Generation and detection evaluate the same contexts many times over;
    with narrow context widths the number of distinct contexts is small.
    """

    def __init__(self, key: WatermarkKey, gamma: float, vocab_size: int):
        self.key = key
        self.gamma = gamma
        self.vocab_size = vocab_size
        self._masks: dict[tuple[int, ...], np.ndarray] = {}

    def mask(self, context: Sequence[int]) -> np.ndarray:
        ctx = tuple(context)
        cached = self._masks.get(ctx)
        if cached is None:
            cached = prf_partition(self.key, ctx, self.gamma, self.vocab_size)
            self._masks[ctx] = cached
        return cached
