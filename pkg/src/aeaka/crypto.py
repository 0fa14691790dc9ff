"""Hash, XOR, nonces, clocks, and the instrumented hash counter.

Every call to :func:`hash` is charged to the entity label currently set with
:func:`acting_as`, in every meter opened with :func:`count_hashes`.  Roles
wrap their protocol handlers in ``acting_as(self.label)``; the harness opens
a meter around the AKA phase only, so registration never shows up in cost
reports.
"""
from __future__ import annotations

import hashlib
import random
import threading
import time
from collections import Counter
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator, Protocol, Sequence

DIGEST_SIZE = 32
DIGEST_BITS = DIGEST_SIZE * 8
TIMESTAMP_BITS = 32
ZERO = bytes(DIGEST_SIZE)

Digest = bytes
Timestamp = int

_meters: ContextVar[tuple[Counter, ...]] = ContextVar("aeaka_meters", default=())
_entity: ContextVar[str] = ContextVar("aeaka_entity", default="")

_total_lock = threading.Lock()
_total_calls = 0


def hash(parts: Sequence[bytes]) -> Digest:  # noqa: A001 - protocol name
    """SHA-256 over the concatenation of already-encoded fields."""
    global _total_calls
    digest = hashlib.sha256(b"".join(parts)).digest()
    with _total_lock:
        _total_calls += 1
    label = _entity.get()
    for meter in _meters.get():
        meter[label] += 1
    return digest


def hash_calls() -> int:
    """Process-wide number of :func:`hash` invocations so far."""
    return _total_calls


@contextmanager
def count_hashes() -> Iterator[Counter]:
    """Collect per-entity hash counts for the enclosed block.

    Unlabelled calls land under the empty-string key.
    """
    meter: Counter = Counter()
    token = _meters.set(_meters.get() + (meter,))
    try:
        yield meter
    finally:
        _meters.reset(token)


@contextmanager
def acting_as(label: str) -> Iterator[None]:
    token = _entity.set(label)
    try:
        yield
    finally:
        _entity.reset(token)


def xor(a: Digest, b: Digest) -> Digest:
    if len(a) != DIGEST_SIZE or len(b) != DIGEST_SIZE:
        raise ValueError(f"xor needs two {DIGEST_SIZE}-byte operands, got {len(a)} and {len(b)}")
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(DIGEST_SIZE, "big")


def check_digest(value: bytes, what: str = "digest") -> Digest:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise ValueError(f"{what} must be {DIGEST_SIZE} bytes")
    return bytes(value)


# --- randomness -----------------------------------------------------------

class Rng(Protocol):
    def randbytes(self, n: int) -> bytes: ...
    def randrange(self, stop: int) -> int: ...


def make_rng(seed: int | str | None = None) -> random.Random:
    """Seeded PRNG for reproducible runs, OS entropy when ``seed`` is None."""
    if seed is None:
        return random.SystemRandom()
    return random.Random(seed)


def random_nonce(rng: Rng) -> Digest:
    return rng.randbytes(DIGEST_SIZE)


# --- time -----------------------------------------------------------------

def to_timestamp(seconds: float) -> Timestamp:
    return int(seconds) & 0xFFFFFFFF


class Clock(Protocol):
    def now(self) -> Timestamp: ...


class SystemClock:
    def now(self) -> Timestamp:
        return to_timestamp(time.time())


class SimClock:
    """Manually driven clock shared by all simulated entities."""

    def __init__(self, start: int = 0):
        self._t = start
        self._lock = threading.Lock()

    def now(self) -> Timestamp:
        return to_timestamp(self._t)

    def advance(self, seconds: int) -> Timestamp:
        with self._lock:
            self._t += seconds
            return to_timestamp(self._t)

    def set(self, t: int) -> None:
        self._t = t

    def skewed(self, skew: int) -> "SkewedClock":
        return SkewedClock(self, skew)


class SkewedClock:
    def __init__(self, base: Clock, skew: int):
        self.base = base
        self.skew = skew

    def now(self) -> Timestamp:
        return to_timestamp(self.base.now() + self.skew)


def now(clock: Clock) -> Timestamp:
    return clock.now()


def fresh(t: Timestamp, now: Timestamp, window: int) -> bool:
    """True iff ``t`` is at most ``window`` seconds old and not future-dated."""
    if window <= 0:
        raise ValueError("freshness window must be positive")
    return 0 <= now - t <= window
