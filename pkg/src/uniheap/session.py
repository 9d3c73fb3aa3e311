"""Sessions: heap lifecycle over a backing file plus the public surface.

Exactly one writer session per heap file system-wide, enforced by an
advisory lock file <path>.lock holding the writer's pid; a stale lock (dead
pid) is reclaimable with force_lock. Read-only sessions see the last-fenced
state of the file and never run fence-bearing operations.
"""
from __future__ import annotations

import contextlib
import os
from typing import Iterable

from .errors import AlreadyFormatted, ConflictRetry, LockHeld, NotAHeap
from .heap import Heap
from .layout import Geometry
from .pmemsim import SimulatedNvm
from .tx import CommitResult, TransactionContext
from .types import UniType

READ_WRITE = "read_write"
READ_ONLY = "read_only"


def _lock_path(path: str) -> str:
    return path + ".lock"


def _acquire_lock(path: str, force: bool) -> None:
    lock = _lock_path(path)
    for _ in range(2):
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            return
        except FileExistsError:
            try:
                with open(lock) as f:
                    pid = int(f.read().strip() or "0")
            except (OSError, ValueError):
                pid = 0
            if pid and _pid_alive(pid):
                raise LockHeld(f"writer pid {pid} holds {lock}") from None
            if not force:
                raise LockHeld(f"stale lock {lock} (pid {pid} is gone); reopen with force_lock") from None
            with contextlib.suppress(FileNotFoundError):
                os.unlink(lock)
    raise LockHeld(f"could not acquire {lock}")


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _release_lock(path: str) -> None:
    with contextlib.suppress(FileNotFoundError):
        os.unlink(_lock_path(path))


class HeapSession:
    """A handle on one heap: device + recovered heap + writer lock."""

    def __init__(self, dev: SimulatedNvm, heap: Heap, path: str | None, mode: str):
        self.dev = dev
        self.heap = heap
        self.path = path
        self.mode = mode
        self._closed = False

    # -- lifecycle ------------------------------------------------------------

    @classmethod
    def create(cls, path: str | None, size: int, name: str,
               geometry: Geometry | None = None, force: bool = False) -> "HeapSession":
        if path is not None:
            if os.path.exists(path) and not force:
                raise AlreadyFormatted(f"{path} exists (pass force=True to re-create)")
            _acquire_lock(path, force)
        try:
            dev = SimulatedNvm.create(path, size)
            heap = Heap.create(dev, name, geometry, force=force)
        except BaseException:
            if path is not None:
                _release_lock(path)
            raise
        return cls(dev, heap, path, READ_WRITE)

    @classmethod
    def open(cls, path: str, mode: str = READ_WRITE, force_lock: bool = False) -> "HeapSession":
        if not os.path.exists(path):
            raise NotAHeap(f"{path} does not exist")
        if mode not in (READ_WRITE, READ_ONLY):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == READ_WRITE:
            _acquire_lock(path, force_lock)
        try:
            dev = SimulatedNvm.open(path)
            heap = Heap.open(dev, read_only=(mode == READ_ONLY))
        except BaseException:
            if mode == READ_WRITE:
                _release_lock(path)
            raise
        return cls(dev, heap, path, mode)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self.mode == READ_WRITE:
            self.heap.persist_hints("close")
            if self.path is not None:
                _release_lock(self.path)
        self.dev.close()

    def __enter__(self) -> "HeapSession":
        return self

    def __exit__(self, *exc) -> bool:
        self.close()
        return False

    # -- public operation surface --------------------------------------------------

    def atomic_begin(self) -> TransactionContext:
        return self.heap.atomic_begin()

    def atomic_end(self, tx: TransactionContext) -> CommitResult:
        return self.heap.atomic_end(tx)

    def abort(self, tx: TransactionContext) -> None:
        self.heap.abort(tx)

    def alloc_obj(self, tx: TransactionContext, plass_id: int,
                  array_length: int | None = None) -> int:
        return self.heap.alloc_obj(tx, plass_id, array_length)

    def read_field(self, ref: int, field_index: int):
        return self.heap.read_field(ref, field_index)

    def write_field(self, tx: TransactionContext, ref: int, field_index: int, value) -> None:
        self.heap.write_field(tx, ref, field_index, value)

    def write_field_atomic(self, ref: int, field_index: int, value) -> None:
        self.heap.write_field_atomic(ref, field_index, value)

    def set_root(self, name: str, ref: int) -> None:
        self.heap.set_root(name, ref)

    def get_root(self, name: str) -> int | None:
        return self.heap.get_root(name)

    def list_roots(self) -> dict[str, int]:
        return self.heap.list_roots()

    def init_plass(self, name: str, fields: Iterable[tuple[str, UniType]]) -> int:
        return self.heap.init_plass(name, fields)

    def exists_plass(self, name: str) -> int | None:
        return self.heap.exists_plass(name)

    def field_index(self, plass_id: int, field_name: str) -> int:
        from .errors import FieldNotFound
        plass = self.heap.get_plass(plass_id)
        idx = plass.index.get(field_name)
        if idx is None:
            raise FieldNotFound(f"plass {plass.name!r} has no field {field_name!r}")
        return idx

    def array_plass(self, element_type: UniType) -> int:
        return self.heap.array_plass(element_type)

    def request_gc(self):
        return self.heap.request_gc()

    def register_runtime(self, vroot_provider, on_forward=None):
        return self.heap.register_runtime(vroot_provider, on_forward)

    def heap_stats(self) -> dict:
        return self.heap.heap_stats()

    def fence_count(self) -> int:
        return self.heap.fence_count()

    @contextlib.contextmanager
    def transaction(self):
        """Failure-atomic region: commits on clean exit, aborts on exception,
        raises ConflictRetry when validation fails."""
        tx = self.atomic_begin()
        try:
            yield tx
        except BaseException:
            if self.heap.current_tx() is tx:
                self.abort(tx)
            raise
        if self.atomic_end(tx) is not CommitResult.COMMITTED:
            raise ConflictRetry("transaction conflicted; run it again")

    def run_transaction(self, fn, max_retries: int = 64):
        """Run fn(tx) until it commits; returns fn's result."""
        for _ in range(max_retries + 1):
            tx = self.atomic_begin()
            try:
                result = fn(tx)
            except BaseException:
                if self.heap.current_tx() is tx:
                    self.abort(tx)
                raise
            if self.atomic_end(tx) is CommitResult.COMMITTED:
                return result
        raise ConflictRetry(f"transaction failed to commit after {max_retries} retries")


def open_heap(path: str, mode: str = READ_WRITE, force_lock: bool = False) -> HeapSession:
    return HeapSession.open(path, mode, force_lock)


def create_heap(path: str | None, size: int, name: str,
                geometry: Geometry | None = None, force: bool = False) -> HeapSession:
    return HeapSession.create(path, size, name, geometry, force)
