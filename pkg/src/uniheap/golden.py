"""Builds the golden heap fixture consumed by the cross-runtime binding.

The fixture is deterministic: a config object with every numeral type, a
two-object reference chain, a long array and a reference array, all hung off
named roots. Alongside the heap a JSON manifest records every expected value
so a foreign-language reader can assert exact equality without sharing any
code with this package.
"""
from __future__ import annotations

import json
import sys

from .session import create_heap
from .tx import CommitResult
from .types import UniType

GOLDEN_NAME = "golden"
GOLDEN_SIZE = 512 * 1024
GOLDEN_GEOMETRY = None  # defaults


def build_golden(heap_path: str, manifest_path: str | None = None) -> dict:
    session = create_heap(heap_path, GOLDEN_SIZE, GOLDEN_NAME, force=True)
    try:
        config_pid = session.init_plass("Config", [
            ("port", UniType.LONG),
            ("ratio", UniType.DOUBLE),
            ("flag", UniType.CHAR),
            ("retries", UniType.INT),
            ("scale", UniType.FLOAT),
            ("peer", UniType.REFERENCE),
        ])
        point_pid = session.init_plass("Point", [("x", UniType.LONG), ("y", UniType.LONG)])
        longs_pid = session.array_plass(UniType.LONG)
        refs_pid = session.array_plass(UniType.REFERENCE)

        tx = session.atomic_begin()
        peer = session.alloc_obj(tx, point_pid)
        session.write_field(tx, peer, 0, 3)
        session.write_field(tx, peer, 1, -4)
        config = session.alloc_obj(tx, config_pid)
        session.write_field(tx, config, 0, 8080)
        session.write_field(tx, config, 1, 0.5)
        session.write_field(tx, config, 2, 1)
        session.write_field(tx, config, 3, -123456)
        session.write_field(tx, config, 4, 2.25)
        session.write_field(tx, config, 5, peer)
        numbers = session.alloc_obj(tx, longs_pid, array_length=5)
        for i, v in enumerate([10, 20, 30, 40, -50]):
            session.write_field(tx, numbers, i, v)
        points = session.alloc_obj(tx, refs_pid, array_length=3)
        session.write_field(tx, points, 0, peer)
        session.write_field(tx, points, 2, config)
        session.set_root("config", config)
        session.set_root("numbers", numbers)
        session.set_root("points", points)
        assert session.atomic_end(tx) is CommitResult.COMMITTED
        stats = session.heap_stats()
    finally:
        session.close()

    manifest = {
        "heap_name": GOLDEN_NAME,
        "heap_size": GOLDEN_SIZE,
        "roots": ["config", "numbers", "points"],
        "plasses": {
            "Config": [["port", "long"], ["ratio", "double"], ["flag", "char"],
                       ["retries", "int"], ["scale", "float"], ["peer", "reference"]],
            "Point": [["x", "long"], ["y", "long"]],
        },
        "config": {"port": 8080, "ratio": 0.5, "flag": 1, "retries": -123456, "scale": 2.25},
        "peer": {"x": 3, "y": -4},
        "numbers": [10, 20, 30, 40, -50],
        "points_length": 3,
        "live_count": stats["live_count"],
    }
    if manifest_path:
        with open(manifest_path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        print("usage: python -m uniheap.golden HEAP_PATH [MANIFEST_PATH]", file=sys.stderr)
        return 2
    manifest = build_golden(argv[0], argv[1] if len(argv) > 1 else None)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
