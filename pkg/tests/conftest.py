import random

import pytest

from uniheap import Geometry, Heap, SimulatedNvm, UniType

SMALL_CAPACITY = 256 * 1024
SMALL_GEOMETRY = Geometry(plass_len=4096, root_len=4096)


@pytest.fixture
def dev():
    return SimulatedNvm.create(None, SMALL_CAPACITY)


@pytest.fixture
def heap(dev):
    return Heap.create(dev, "test", SMALL_GEOMETRY)


@pytest.fixture
def point_heap(heap):
    """Heap with a two-long plass 'Point' ready to allocate."""
    heap.init_plass("Point", [("x", UniType.LONG), ("y", UniType.LONG)])
    return heap


def make_heap(capacity=SMALL_CAPACITY, geometry=SMALL_GEOMETRY, name="test"):
    dev = SimulatedNvm.create(None, capacity)
    return Heap.create(dev, name, geometry)


def commit(heap, fn):
    """Run fn(tx) in a transaction; asserts it commits."""
    from uniheap import CommitResult
    tx = heap.atomic_begin()
    result = fn(tx)
    assert heap.atomic_end(tx) is CommitResult.COMMITTED
    return result


def build_point(heap, x, y, pid=None):
    pid = pid or heap.exists_plass("Point")

    def body(tx):
        ref = heap.alloc_obj(tx, pid)
        heap.write_field(tx, ref, 0, x)
        heap.write_field(tx, ref, 1, y)
        return ref

    return commit(heap, body)


def reopen_after_crash(heap, keep="all", seed=None):
    """Crash the heap's device and reopen: the recovery round trip."""
    dev2 = heap.dev.crash(keep=keep, seed=seed)
    return Heap.open(dev2)


def random_graph_workload(heap, rng: random.Random, n_objects: int, n_updates: int,
                          plass_fields=None, root_every: int = 16):
    """Builds a random object graph with reference cycles; returns object ids.
    Objects are committed in batches; a sprinkling of named roots pins random
    subsets of the graph."""
    fields = plass_fields or [("val", UniType.LONG), ("next", UniType.REFERENCE),
                              ("other", UniType.REFERENCE)]
    pid = heap.init_plass("Node", fields)
    refs = []
    batch = 32
    i = 0
    while i < n_objects:
        n = min(batch, n_objects - i)
        tx = heap.atomic_begin()
        for _ in range(n):
            r = heap.alloc_obj(tx, pid)
            heap.write_field(tx, r, 0, rng.randrange(1, 1 << 30))
            refs.append(r)
        from uniheap import CommitResult
        assert heap.atomic_end(tx) is CommitResult.COMMITTED
        i += n
    for k in range(n_updates):
        tx = heap.atomic_begin()
        a = rng.choice(refs)
        which = rng.random()
        if which < 0.4:
            heap.write_field(tx, a, 0, rng.randrange(1, 1 << 30))
        elif which < 0.8:
            heap.write_field(tx, a, 1, rng.choice(refs))
        else:
            heap.write_field(tx, a, 2, rng.choice(refs) if rng.random() < 0.9 else 0)
        from uniheap import CommitResult
        assert heap.atomic_end(tx) is CommitResult.COMMITTED
    for k, r in enumerate(refs):
        if k % root_every == 0 and rng.random() < 0.5:
            heap.set_root(f"r{k}", r)
    return refs
