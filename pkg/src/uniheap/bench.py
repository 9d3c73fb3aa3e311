"""Key-value workloads for fence accounting.

Workload mixes follow the usual cloud-serving benchmark letters:
  a  50% read / 50% update        b  95% read / 5% update
  c  read-only                    d  95% read-latest / 5% insert
  f  50% read / 50% read-modify-write

The schema is one plass {key: long, value: long} plus a reference array
used as the index, hung off the durable root "index". Fences are counted
from a snapshot taken after setup, so a read-only run reports exactly the
fences its operations incur: zero.

Baseline mode replaces the two-fence transaction commit with eager per-store
persistence (write_field_eager: undo image + new value, two fences per
store), the discipline this log-structured design exists to avoid.
"""
from __future__ import annotations

import random
import threading
from dataclasses import dataclass

from .session import HeapSession
from .tx import CommitResult, write_field_eager
from .types import UniType

PRELOAD = 256
WORKLOADS = ("a", "b", "c", "d", "f")

_UPDATE_FRACTION = {"a": 0.5, "b": 0.05, "c": 0.0, "d": 0.05, "f": 0.5}

F_KEY = 0
F_VALUE = 1


@dataclass
class BenchResult:
    workload: str
    ops: int
    fence_total: int
    committed_txs: int
    fences_per_tx: float
    reads: int
    writes: int
    conflicts: int
    baseline: bool
    batch: int
    threads: int

    def to_dict(self) -> dict:
        return dict(vars(self))


def _setup(session: HeapSession, workload: str, ops: int, seed: int) -> tuple[int, int, int]:
    """Returns (kv plass id, index ref, preloaded count)."""
    heap = session.heap
    kv = session.init_plass("kv", [("key", UniType.LONG), ("value", UniType.LONG)])
    arr = session.array_plass(UniType.REFERENCE)
    rng = random.Random(seed ^ 0x5EED)
    capacity = PRELOAD + (ops if workload == "d" else 0) + 8
    index = session.get_root("index")
    if index is not None and heap.objects[index].slot_count < capacity:
        index = None  # a previous run's index is too small for this op count
    if index is None:
        tx = session.atomic_begin()
        index = session.alloc_obj(tx, arr, array_length=capacity)
        session.set_root("index", index)
        assert session.atomic_end(tx) is CommitResult.COMMITTED
    if session.read_field(index, PRELOAD - 1):
        return kv, index, PRELOAD  # an earlier run already preloaded
    count = 0
    while count < PRELOAD:
        n = min(64, PRELOAD - count)
        tx = session.atomic_begin()
        for i in range(count, count + n):
            ref = session.alloc_obj(tx, kv)
            session.write_field(tx, ref, F_KEY, i)
            session.write_field(tx, ref, F_VALUE, rng.randrange(1, 1 << 40))
            session.write_field(tx, index, i, ref)
        assert session.atomic_end(tx) is CommitResult.COMMITTED
        count += n
    return kv, index, count


def run_bench(session: HeapSession, workload: str, ops: int, seed: int = 0,
              threads: int = 1, baseline: bool = False, batch: int = 1) -> BenchResult:
    if workload not in WORKLOADS:
        raise ValueError(f"workload must be one of {WORKLOADS}")
    heap = session.heap
    heap.auto_gc = False  # fence accounting must not absorb a collection
    kv, index, count = _setup(session, workload, ops, seed)
    fence_base = heap.fence_count()

    state = _SharedState(count)
    if threads == 1:
        counters = [_run_ops(session, workload, ops, random.Random(seed),
                             kv, index, state, baseline, batch)]
    else:
        counters = _run_threaded(session, workload, ops, seed, threads,
                                 kv, index, state, baseline, batch)
    reads = sum(c["reads"] for c in counters)
    writes = sum(c["writes"] for c in counters)
    txs = sum(c["txs"] for c in counters)
    conflicts = sum(c["conflicts"] for c in counters)

    fence_total = heap.fence_count() - fence_base
    return BenchResult(
        workload=workload, ops=ops, fence_total=fence_total,
        committed_txs=txs, fences_per_tx=round(fence_total / txs, 3) if txs else 0.0,
        reads=reads, writes=writes, conflicts=conflicts,
        baseline=baseline, batch=batch, threads=threads)


class _SharedState:
    def __init__(self, count: int):
        self.lock = threading.Lock()
        self.count = count

    def reserve_insert(self) -> int:
        with self.lock:
            slot = self.count
            self.count += 1
            return slot


def _run_threaded(session, workload, ops, seed, threads, kv, index, state, baseline, batch):
    counters = []
    errors = []

    def worker(t: int, n: int):
        try:
            counters.append(_run_ops(session, workload, n, random.Random(seed + t),
                                     kv, index, state, baseline, batch))
        except Exception as exc:  # surfaced after join
            errors.append(exc)

    per = [ops // threads + (1 if t < ops % threads else 0) for t in range(threads)]
    ts = [threading.Thread(target=worker, args=(t, n)) for t, n in enumerate(per)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    if errors:
        raise errors[0]
    return counters


def _run_ops(session: HeapSession, workload: str, ops: int, rng: random.Random,
             kv: int, index: int, state: _SharedState, baseline: bool, batch: int) -> dict:
    heap = session.heap
    update_fraction = _UPDATE_FRACTION[workload]
    reads = writes = txs = conflicts = 0

    def read_one(slot: int) -> None:
        nonlocal reads
        ref = session.read_field(index, slot)
        if ref:
            session.read_field(ref, F_VALUE)
        reads += 1

    def pick_slot() -> int:
        if workload == "d":
            # read-latest: strong bias toward recently inserted keys
            recent = max(1, state.count // 10)
            return state.count - 1 - min(int(abs(rng.gauss(0, recent))), state.count - 1)
        return rng.randrange(state.count)

    for _ in range(ops):
        roll = rng.random()
        if roll >= update_fraction:
            read_one(pick_slot())
            continue
        if workload == "d":
            slot = state.reserve_insert()
            while True:
                tx = session.atomic_begin()
                ref = session.alloc_obj(tx, kv)
                session.write_field(tx, ref, F_KEY, slot)
                session.write_field(tx, ref, F_VALUE, rng.randrange(1, 1 << 40))
                session.write_field(tx, index, slot, ref)
                if session.atomic_end(tx) is CommitResult.COMMITTED:
                    txs += 1
                    writes += 2
                    break
                conflicts += 1
            continue
        slots = rng.sample(range(PRELOAD), k=min(batch, PRELOAD))
        if baseline:
            # eager per-store persistence; no transaction, two fences a store
            for slot in slots:
                ref = session.read_field(index, slot)
                write_field_eager(heap, ref, F_VALUE, rng.randrange(1, 1 << 40))
                writes += 1
            txs += 1
            continue
        while True:
            tx = session.atomic_begin()
            for slot in slots:
                ref = session.read_field(index, slot)
                if workload == "f":
                    old = session.read_field(ref, F_VALUE)
                    session.write_field(tx, ref, F_VALUE, (old + 1) & ((1 << 62) - 1))
                else:
                    session.write_field(tx, ref, F_VALUE, rng.randrange(1, 1 << 40))
            if session.atomic_end(tx) is CommitResult.COMMITTED:
                txs += 1
                writes += len(slots)
                break
            conflicts += 1
    return {"reads": reads, "writes": writes, "txs": txs, "conflicts": conflicts}
