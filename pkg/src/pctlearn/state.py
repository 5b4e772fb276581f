"""Per-user contrastive pools, interaction counters, and snapshot persistence.

Each user carries a fixed-capacity pool holding a uniform random sample of
their historical engagement magnitudes, maintained by reservoir sampling,
plus a counter of how many interactions have been processed for them. The
store keys these states by user id and hands out one dedicated RNG stream
per user so pool evolution is reproducible regardless of how users are
interleaved in the stream.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator

import numpy as np

SNAPSHOT_MAGIC = b"PCTSNAP1"

DEFAULT_CAPACITY = 50
DEFAULT_GATE_THRESHOLD = 10


class SnapshotError(ValueError):
    """A snapshot byte stream could not be decoded.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class PoolEntry:
    """One reservoir slot.

    ``magnitude`` is the raw engagement value (seconds, currency units, or a
    0/1 event). ``prior_pred`` is the model's predicted magnitude captured at
    the moment the entry was inserted; bootstrapped labels compare against it
    instead of the raw value.
    """

    magnitude: float
    prior_pred: float


@dataclass
class UserState:
    """Reservoir pool plus interaction counter for one user."""

    capacity: int = DEFAULT_CAPACITY
    counter: int = 0
    pool: list[PoolEntry] = field(default_factory=list)


def reservoir_update(
    state: UserState, entry: PoolEntry, rng: np.random.Generator
) -> UserState:
    """Fold one interaction into the user's pool, mutating ``state`` in place.

    The counter is incremented first. During the fill phase (counter <=
    capacity) the entry is appended. Afterwards it is accepted with
    probability capacity/counter and, if accepted, overwrites a uniformly
    random slot; otherwise it is discarded. This keeps the pool a uniform
    random sample of everything the counter has seen.
    """
    if entry.magnitude < 0 or entry.prior_pred < 0:
        raise ValueError(
            f"pool entries must be non-negative, got "
            f"(magnitude={entry.magnitude}, prior_pred={entry.prior_pred})"
        )
    state.counter += 1
    if state.counter <= state.capacity:
        state.pool.append(entry)
    elif rng.random() < state.capacity / state.counter:
        state.pool[int(rng.integers(0, state.capacity))] = entry
    return state


def gating_allows(state: UserState, tau: int) -> bool:
    """True iff the user's history is large enough to trust its percentiles.

    Compares the counter as it stood *before* the current interaction is
    inserted, so the decision never depends on the instance being labelled.
    """
    if tau < 1:
        raise ValueError(f"gate threshold must be >= 1, got {tau}")
    return state.counter >= tau


def _user_stream_key(user_id: str) -> int:
    # stable 64-bit key; python's hash() is salted per process
    digest = hashlib.blake2s(user_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class StateStore:
    """Map from user id to UserState with per-user RNG streams.

    Lookups for unseen users return a fresh empty state. Per-user updates
    must be serialized by the caller (single writer per user id); distinct
    users may be updated concurrently.
    """

    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        tau: int = DEFAULT_GATE_THRESHOLD,
        seed: int = 0,
    ):
        if capacity < 1:
            raise ValueError(f"pool capacity must be >= 1, got {capacity}")
        if tau < 1:
            raise ValueError(f"gate threshold must be >= 1, got {tau}")
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.capacity = capacity
        self.tau = tau
        self.seed = seed
        self._states: dict[str, UserState] = {}
        self._rngs: dict[str, np.random.Generator] = {}

    def state(self, user_id: str) -> UserState:
        st = self._states.get(user_id)
        if st is None:
            st = UserState(capacity=self.capacity)
            self._states[user_id] = st
        return st

    def rng(self, user_id: str) -> np.random.Generator:
        """The user's dedicated RNG stream, derived from (seed, user id)."""
        gen = self._rngs.get(user_id)
        if gen is None:
            seq = np.random.SeedSequence([self.seed, _user_stream_key(user_id)])
            gen = np.random.default_rng(seq)
            self._rngs[user_id] = gen
        return gen

    def users(self) -> Iterator[tuple[str, UserState]]:
        return iter(self._states.items())

    def __len__(self) -> int:
        return len(self._states)

    def reset(self) -> None:
        """Drop all user states and RNG streams (used between epochs)."""
        self._states.clear()
        self._rngs.clear()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StateStore):
            return NotImplemented
        return (
            self.capacity == other.capacity
            and self.tau == other.tau
            and self.seed == other.seed
            and self._states == other._states
        )


# --------------------------------------------------------------------------
# Snapshot format: 8-byte magic, little-endian fixed-width config fields,
# then one length-prefixed record per user. Floats are 64-bit throughout so
# state round-trips exactly.
# --------------------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise SnapshotError(f"truncated snapshot while reading {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]


def _user_record(user_id: str, state: UserState) -> bytes:
    uid = user_id.encode("utf-8")
    parts = [struct.pack("<H", len(uid)), uid]
    parts.append(struct.pack("<QI", state.counter, len(state.pool)))
    for entry in state.pool:
        parts.append(struct.pack("<dd", entry.magnitude, entry.prior_pred))
    return b"".join(parts)


def snapshot_store(store: StateStore, sink: BinaryIO) -> None:
    """Serialize the store so ``load_store`` restores it field for field."""
    sink.write(SNAPSHOT_MAGIC)
    sink.write(struct.pack("<IIQ", store.capacity, store.tau, store.seed))
    sink.write(struct.pack("<Q", len(store)))
    for user_id, state in store.users():
        record = _user_record(user_id, state)
        sink.write(struct.pack("<I", len(record)))
        sink.write(record)


def load_store(source: BinaryIO) -> StateStore:
    """Decode a snapshot produced by ``snapshot_store``.

    Raises SnapshotError naming the failing byte offset on malformed input.
    """
    reader = _Reader(source.read())
    magic = reader.take(len(SNAPSHOT_MAGIC), "magic header")
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError(f"bad magic header {magic!r}", 0)
    capacity = reader.u32("capacity")
    tau = reader.u32("gate threshold")
    seed = reader.u64("seed")
    try:
        store = StateStore(capacity=capacity, tau=tau, seed=seed)
    except ValueError as exc:
        raise SnapshotError(f"invalid store config: {exc}", 8) from exc
    n_users = reader.u64("user count")
    for _ in range(n_users):
        record_len = reader.u32("record length")
        record_start = reader.pos
        rec = _Reader(reader.take(record_len, "user record"))
        rec.pos = 0
        uid_len = rec.u16("user id length")
        try:
            user_id = rec.take(uid_len, "user id").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SnapshotError("user id is not valid utf-8", record_start) from exc
        counter = rec.u64("counter")
        pool_len = rec.u32("pool length")
        state = UserState(capacity=capacity, counter=counter)
        for _ in range(pool_len):
            magnitude = rec.f64("pool magnitude")
            prior_pred = rec.f64("pool prior prediction")
            state.pool.append(PoolEntry(magnitude, prior_pred))
        if rec.pos != record_len:
            raise SnapshotError(
                f"user record has {record_len - rec.pos} unconsumed bytes",
                record_start + rec.pos,
            )
        if pool_len != min(counter, capacity):
            raise SnapshotError(
                f"pool length {pool_len} inconsistent with counter {counter}",
                record_start,
            )
        store._states[user_id] = state
    if reader.pos != len(reader.data):
        raise SnapshotError("trailing bytes after last user record", reader.pos)
    return store
