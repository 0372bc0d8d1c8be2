"""Checkpoint storage: primal states and stages written forward, read in reverse.

Binary layout (all little-endian)::

    b"ADJK" | version u32 | N_u u64 | s u32 | N_t u64 | t_0..t_{N_t} f64
    record 0 = u^(0), then per step n: k_1^(n) .. k_s^(n), u^(n)

Every record is ``N_u`` float64 values, so the slot of ``k_i^(n)`` is
``(n-1)(s+1) + i`` and that of ``u^(n)`` is ``n(s+1)``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"ADJK"
VERSION = 1
_HEAD = struct.Struct("<4sIQIQ")
_F64 = np.dtype("<f8")


class CheckpointError(RuntimeError):
    pass


class CheckpointOrderError(CheckpointError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    pass


@dataclass(frozen=True)
class Slot:
    """Record address: ``kind`` is ``"state"`` (``u^(n)``) or ``"stage"`` (``k_i^(n)``)."""

    n: int
    kind: str = "state"
    i: int = 0

    @classmethod
    def initial(cls) -> "Slot":
        return cls(0, "state")

    def index(self, s: int) -> int:
        if self.kind == "state":
            return self.n * (s + 1)
        if self.kind == "stage":
            if self.n < 1 or not 1 <= self.i <= s:
                raise ValueError(f"bad stage slot {self}")
            return (self.n - 1) * (s + 1) + self.i
        raise ValueError(f"unknown slot kind {self.kind!r}")


def header_size(n_t: int) -> int:
    return _HEAD.size + 8 * (n_t + 1)


def expected_file_size(n_u: int, s: int, n_t: int) -> int:
    return header_size(n_t) + (1 + n_t * (s + 1)) * n_u * 8


class _Store:
    """Shared sequencing and reverse-iteration logic."""

    def __init__(self, n_u: int, s: int, t: np.ndarray):
        self.n_u, self.s = int(n_u), int(s)
        self.t = np.asarray(t, dtype=float)
        self.n_t = self.t.size - 1
        self._next = 0
        self.partial = False
        self.read_offsets: list[int] = []

    @property
    def n_records(self) -> int:
        return 1 + self.n_t * (self.s + 1)

    @property
    def complete(self) -> bool:
        return self._next == self.n_records and not self.partial

    def write_record(self, slot: Slot, data: np.ndarray) -> None:
        idx = slot.index(self.s)
        if idx != self._next:
            raise CheckpointOrderError(
                f"slot {slot} (record {idx}) written out of order; expected record {self._next}")
        data = np.asarray(data, dtype=_F64)
        if data.shape != (self.n_u,):
            raise ValueError(f"record must have shape ({self.n_u},), got {data.shape}")
        try:
            self._put(idx, data)
        except OSError as exc:
            self.mark_partial()
            raise CheckpointError(f"I/O failure writing slot {slot}: {exc}") from exc
        self._next += 1

    def mark_partial(self) -> None:
        self.partial = True

    def _check_request(self, n_u, s, n_t, t):
        if n_u is not None and n_u != self.n_u:
            raise CheckpointMismatchError(f"N_u mismatch: stored {self.n_u}, requested {n_u}")
        if s is not None and s != self.s:
            raise CheckpointMismatchError(f"stage count mismatch: stored {self.s}, requested {s}")
        if n_t is not None and n_t != self.n_t:
            raise CheckpointMismatchError(f"N_t mismatch: stored {self.n_t}, requested {n_t}")
        if t is not None and not np.array_equal(np.asarray(t, dtype=float), self.t):
            raise CheckpointMismatchError("time grid mismatch")

    def _read(self, idx: int) -> np.ndarray:
        if self.read_offsets and idx >= self.read_offsets[-1]:
            raise CheckpointOrderError(
                f"non-descending read of record {idx} after {self.read_offsets[-1]}")
        self.read_offsets.append(idx)
        return self._get(idx)

    def read_reverse(self, n_u=None, s=None, n_t=None, t=None
                     ) -> Iterator[tuple[np.ndarray, ...]]:
        """Yield ``u^(N_t)``, then ``(u^(n-1), k_s^(n), ..., k_1^(n))`` for ``n = N_t..1``.

        Records are fetched at strictly descending offsets: the stages of a
        step are read before ``u^(n-1)``, which precedes them on disk.
        """
        self._check_request(n_u, s, n_t, t)
        self._check_complete()
        self.read_offsets = []
        yield self._read(Slot(self.n_t).index(self.s))
        for n in range(self.n_t, 0, -1):
            stages = [self._read(Slot(n, "stage", i).index(self.s))
                      for i in range(self.s, 0, -1)]
            u_prev = self._read(Slot(n - 1).index(self.s))
            yield (u_prev, *stages)

    def read_slot(self, slot: Slot) -> np.ndarray:
        """Random access (forward replay, tests); not used by the adjoint sweep."""
        return self._get(slot.index(self.s))

    def _check_complete(self):
        raise NotImplementedError

    def _put(self, idx, data):
        raise NotImplementedError

    def _get(self, idx):
        raise NotImplementedError


class MemoryStore(_Store):
    """In-memory checkpoint store with the same contract as :class:`FileStore`."""

    def __init__(self, n_u: int, s: int, t: np.ndarray):
        super().__init__(n_u, s, t)
        self._records: list[np.ndarray] = []

    def _put(self, idx, data):
        self._records.append(data.copy())

    def _get(self, idx):
        if idx >= len(self._records):
            raise CheckpointTruncatedError(f"record {idx} missing")
        return self._records[idx].copy()

    def _check_complete(self):
        if self.partial:
            raise CheckpointTruncatedError("store marked partial")
        if len(self._records) != self.n_records:
            raise CheckpointTruncatedError(
                f"{len(self._records)} of {self.n_records} records present")


class FileStore(_Store):
    """Binary checkpoint file; see module docstring for the layout."""

    def __init__(self, path: str | os.PathLike, n_u: int, s: int, t: np.ndarray,
                 mode: str = "w"):
        super().__init__(n_u, s, t)
        self.path = Path(path)
        self._fh = None
        if mode == "w":
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._partial_marker.unlink(missing_ok=True)
            self._fh = open(self.path, "w+b")
            self._fh.write(_HEAD.pack(MAGIC, VERSION, self.n_u, self.s, self.n_t))
            self._fh.write(self.t.astype(_F64).tobytes())
            self._fh.flush()
        elif mode == "r":
            self._fh = open(self.path, "rb")
            self._next = self.n_records
        else:
            raise ValueError(f"mode must be 'w' or 'r', got {mode!r}")

    @classmethod
    def open(cls, path: str | os.PathLike) -> "FileStore":
        """Open an existing checkpoint for reading, validating its header."""
        path = Path(path)
        with open(path, "rb") as fh:
            head = fh.read(_HEAD.size)
            if len(head) < _HEAD.size:
                raise CheckpointTruncatedError(f"{path}: truncated header")
            magic, version, n_u, s, n_t = _HEAD.unpack(head)
            if magic != MAGIC:
                raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
            if version != VERSION:
                raise CheckpointFormatError(f"{path}: unsupported version {version}")
            raw = fh.read(8 * (n_t + 1))
            if len(raw) < 8 * (n_t + 1):
                raise CheckpointTruncatedError(f"{path}: truncated time grid")
            t = np.frombuffer(raw, dtype=_F64).astype(float)
        store = cls(path, n_u, s, t, mode="r")
        if Path(str(path) + ".partial").exists():
            store.partial = True
        return store

    @property
    def _partial_marker(self) -> Path:
        return Path(str(self.path) + ".partial")

    def mark_partial(self) -> None:
        super().mark_partial()
        try:
            self._partial_marker.write_text("incomplete checkpoint\n")
        except OSError:
            pass

    def _offset(self, idx: int) -> int:
        return header_size(self.n_t) + idx * self.n_u * 8

    def _put(self, idx, data):
        self._fh.seek(self._offset(idx))
        self._fh.write(data.tobytes())
        self._fh.flush()

    def _get(self, idx):
        self._fh.seek(self._offset(idx))
        raw = self._fh.read(self.n_u * 8)
        if len(raw) < self.n_u * 8:
            raise CheckpointTruncatedError(f"{self.path}: record {idx} truncated")
        return np.frombuffer(raw, dtype=_F64).astype(float)

    def _check_complete(self):
        if self.partial:
            raise CheckpointTruncatedError(f"{self.path}: marked partial")
        size = self.path.stat().st_size
        want = expected_file_size(self.n_u, self.s, self.n_t)
        if size < want:
            raise CheckpointTruncatedError(f"{self.path}: {size} bytes, expected {want}")

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
