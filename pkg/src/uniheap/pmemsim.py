"""Simulated byte-addressable NVM device.

The device keeps two byte images: a volatile view (what the CPU sees) and a
persisted view (what survives power loss). Writes land in the volatile view
and mark 64-byte lines dirty; flush_range moves dirty lines into a
flushed-pending set; fence copies every pending line into the persisted view.
This mirrors the clwb/sfence discipline of real persistent memory: only data
that was flushed *and* fenced is durable, flushed-but-unfenced lines may or
may not survive a crash, unflushed lines never do.

When a backing path is given, the file always holds exactly the persisted
view (updated line-wise at each fence), so a second process reading the file
observes the last-fenced state. A path of None gives a purely in-memory
device, which the test suites use heavily for speed.

Crash testing: schedule_crash(at_fence=N) arms the device to raise
SimulatedCrash when fence number N is entered (before it takes effect);
crash() then materializes one power-loss outcome, keeping an arbitrary
subset of the flushed-pending lines. The subset policy is controllable:
"all", "none", an explicit line set, a callable, or seeded randomness
(UNIHEAP_CRASH_SEED pins the seed).
"""
from __future__ import annotations

import os
import random
import struct
import threading
from typing import Callable, Iterable

from .errors import (
    DeviceClosed,
    InvalidCapacity,
    Misaligned,
    OutOfBounds,
    SimulatedCrash,
)

LINE_SIZE = 64

_U64 = struct.Struct("<Q")

KeepPolicy = str | Iterable[int] | Callable[[frozenset[int]], Iterable[int]]


class SimulatedNvm:
    def __init__(self, capacity: int, path: str | None = None, _image: bytes | None = None):
        if capacity <= 0 or capacity % LINE_SIZE != 0:
            raise InvalidCapacity(f"capacity {capacity} must be a positive multiple of {LINE_SIZE}")
        self.capacity = capacity
        self.backing_path = path
        if _image is None:
            self._persisted = bytearray(capacity)
        else:
            self._persisted = bytearray(_image)
        self._volatile = bytearray(self._persisted)
        self.dirty_lines: set[int] = set()
        self.flushed_pending: set[int] = set()
        self._fence_count = 0
        self._flush_count = 0
        self.fence_by_tag: dict[str, int] = {}
        self._crash_at_fence: int | None = None
        self._closed = False
        self._mu = threading.RLock()
        self._fd: int | None = None
        if path is not None:
            self._fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
            os.ftruncate(self._fd, capacity)
            if _image is None:
                # adopt whatever the file already holds
                data = os.pread(self._fd, capacity, 0)
                self._persisted = bytearray(data)
                self._volatile = bytearray(data)

    # -- lifecycle -----------------------------------------------------------

    @classmethod
    def create(cls, path: str | None, capacity: int) -> "SimulatedNvm":
        """Fresh zero-filled device; truncates any existing file at path."""
        if capacity <= 0 or capacity % LINE_SIZE != 0:
            raise InvalidCapacity(f"capacity {capacity} must be a positive multiple of {LINE_SIZE}")
        if path is not None and os.path.exists(path):
            os.unlink(path)
        return cls(capacity, path, _image=bytes(capacity))

    @classmethod
    def open(cls, path: str) -> "SimulatedNvm":
        size = os.stat(path).st_size
        if size <= 0 or size % LINE_SIZE != 0:
            raise InvalidCapacity(f"file size {size} is not a multiple of {LINE_SIZE}")
        return cls(size, path)

    def close(self) -> None:
        with self._mu:
            if self._fd is not None:
                os.close(self._fd)
                self._fd = None
            self._closed = True

    def _check_open(self) -> None:
        if self._closed:
            raise DeviceClosed("device is closed")

    # -- data path -------------------------------------------------------------

    def _check_range(self, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > self.capacity:
            raise OutOfBounds(f"range [{offset}, {offset + length}) outside capacity {self.capacity}")

    def _lines(self, offset: int, length: int) -> range:
        if length == 0:
            return range(0)
        return range(offset // LINE_SIZE, (offset + length - 1) // LINE_SIZE + 1)

    def write(self, offset: int, data: bytes | bytearray | memoryview) -> None:
        with self._mu:
            self._check_open()
            n = len(data)
            self._check_range(offset, n)
            self._volatile[offset:offset + n] = data
            self.dirty_lines.update(self._lines(offset, n))

    def read(self, offset: int, length: int) -> bytes:
        self._check_range(offset, length)
        return bytes(self._volatile[offset:offset + length])

    def read_persisted(self, offset: int, length: int) -> bytes:
        self._check_range(offset, length)
        return bytes(self._persisted[offset:offset + length])

    def view(self, offset: int, length: int) -> memoryview:
        """Zero-copy window into the volatile view (callers must not mutate)."""
        self._check_range(offset, length)
        return memoryview(self._volatile)[offset:offset + length]

    def write_u64(self, offset: int, value: int) -> None:
        self.write(offset, _U64.pack(value))

    def read_u64(self, offset: int) -> int:
        return _U64.unpack_from(self._volatile, offset)[0]

    def atomic_write_u64(self, offset: int, value: int) -> None:
        """8 bytes updated as one unit; never torn across a crash. Does not
        flush or fence by itself."""
        if offset % 8 != 0:
            raise Misaligned(f"offset {offset} not 8-byte aligned")
        # an aligned u64 sits inside a single 64-byte line, and the crash
        # model keeps or drops whole lines, so atomicity falls out
        self.write(offset, _U64.pack(value))

    def flush_range(self, offset: int, length: int) -> None:
        with self._mu:
            self._check_open()
            self._check_range(offset, length)
            for line in self._lines(offset, length):
                if line in self.dirty_lines:
                    self.dirty_lines.discard(line)
                    self.flushed_pending.add(line)
                    self._flush_count += 1

    def fence(self, tag: str = "untagged") -> None:
        with self._mu:
            self._check_open()
            if self._crash_at_fence is not None and self._fence_count + 1 == self._crash_at_fence:
                # power is lost before this fence takes effect
                raise SimulatedCrash(f"scheduled crash at fence #{self._crash_at_fence}")
            for line in self.flushed_pending:
                self._persist_line(line)
                self.dirty_lines.discard(line)
            self.flushed_pending.clear()
            self._fence_count += 1
            self.fence_by_tag[tag] = self.fence_by_tag.get(tag, 0) + 1

    def _persist_line(self, line: int) -> None:
        start = line * LINE_SIZE
        chunk = self._volatile[start:start + LINE_SIZE]
        self._persisted[start:start + LINE_SIZE] = chunk
        if self._fd is not None:
            os.pwrite(self._fd, chunk, start)

    # -- accounting ---------------------------------------------------------------

    @property
    def fence_count(self) -> int:
        return self._fence_count

    @property
    def flush_count(self) -> int:
        return self._flush_count

    # -- crash machinery -------------------------------------------------------------

    def schedule_crash(self, at_fence: int) -> None:
        """Arm the device to raise SimulatedCrash when fence number at_fence
        (1-based, counted over the device's lifetime) is entered."""
        self._crash_at_fence = at_fence

    def clear_crash_schedule(self) -> None:
        self._crash_at_fence = None

    def crash(self, keep: KeepPolicy = "random", seed: int | None = None) -> "SimulatedNvm":
        """Simulate power loss and reboot.

        Returns a fresh device whose state is the persisted view plus the
        chosen subset of flushed-pending lines. Dirty (unflushed) lines are
        always lost. The original device becomes unusable.
        """
        with self._mu:
            self._check_open()
            pending = frozenset(self.flushed_pending)
            kept = self._choose_kept(pending, keep, seed)
            image = bytearray(self._persisted)
            for line in kept:
                start = line * LINE_SIZE
                image[start:start + LINE_SIZE] = self._volatile[start:start + LINE_SIZE]
                if self._fd is not None:
                    os.pwrite(self._fd, image[start:start + LINE_SIZE], start)
            path = self.backing_path
            if self._fd is not None:
                os.close(self._fd)
                self._fd = None
            self._closed = True
            return SimulatedNvm(self.capacity, path, _image=bytes(image))

    @staticmethod
    def _choose_kept(pending: frozenset[int], keep: KeepPolicy, seed: int | None) -> set[int]:
        if keep == "all":
            return set(pending)
        if keep == "none":
            return set()
        if keep == "random":
            if seed is None:
                env = os.environ.get("UNIHEAP_CRASH_SEED")
                seed = int(env) if env is not None else None
            rng = random.Random(seed)
            return {line for line in sorted(pending) if rng.random() < 0.5}
        if callable(keep):
            chosen = set(keep(pending))
        else:
            chosen = set(keep)
        if not chosen <= pending:
            raise ValueError(f"kept lines {chosen - pending} were not in flushed_pending")
        return chosen
