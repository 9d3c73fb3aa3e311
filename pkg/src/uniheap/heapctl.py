"""heapctl: create, inspect, verify, collect and benchmark heap files.

Exit codes: 0 ok, 1 verification found violations, 2 usage or I/O error.
Every subcommand takes --json for machine-readable output with stable field
names. UNIHEAP_CRASH_SEED in the environment pins the crash-subset RNG of
the simulated device (it is read by the device itself).
"""
from __future__ import annotations

import argparse
import json
import sys

from .bench import WORKLOADS, run_bench
from .errors import UniheapError
from .layout import REGION_NAMES, read_header
from .pmemsim import SimulatedNvm
from .session import READ_WRITE, HeapSession, create_heap, open_heap
from .verify import verify_device


def _cmd_create(args) -> int:
    session = create_heap(args.path, args.size, args.name, force=args.force)
    stats = session.heap_stats()
    session.close()
    _emit(args, stats, lambda s: print(f"created heap {s['name']!r}: {s['heap_size']} bytes at {args.path}"))
    return 0


def _cmd_info(args) -> int:
    session = open_heap(args.path, mode="read_only")
    try:
        heap = session.heap
        header = read_header(session.dev)
        info = {
            "name": header.name,
            "heap_size": header.heap_size,
            "active_epoch": header.active_epoch,
            "gc_phase": header.gc_phase,
            "regions": {n: {"offset": r.offset, "length": r.length}
                        for n, r in header.regions.items()},
            "stats": heap.heap_stats(),
            "roots": heap.list_roots(),
            "plasses": [{"id": p.plass_id, "name": p.name,
                         "fields": [[f, t.name.lower()] for f, t in p.fields]}
                        for p in heap.plasses],
            "fence_by_tag": dict(session.dev.fence_by_tag),
        }
    finally:
        session.close()

    def render(d):
        print(f"heap {d['name']!r}  size {d['heap_size']}  epoch {d['active_epoch']}  gc_phase {d['gc_phase']}")
        for n in REGION_NAMES:
            r = d["regions"][n]
            print(f"  region {n:<9} offset {r['offset']:>10}  length {r['length']:>10}")
        s = d["stats"]
        print(f"  objects {s['object_count']}  live {s['live_count']}  plasses {s['plass_count']}"
              f"  log_bytes {s['log_bytes_used']}")
        for name, ref in sorted(d["roots"].items()):
            print(f"  root {name!r} -> object {ref}")
        for p in d["plasses"]:
            fields = ", ".join(f"{f}:{t}" for f, t in p["fields"])
            print(f"  plass {p['id']} {p['name']!r} ({fields})")

    _emit(args, info, render)
    return 0


def _cmd_verify(args) -> int:
    dev = SimulatedNvm.open(args.path)
    try:
        report = verify_device(dev)
    finally:
        dev.close()

    def render(d):
        for v in d["violations"]:
            print(f"VIOLATION {v['code']} at {v['location']}: {v['detail']}")
        total = sum(d["checked"].values())
        state = "clean" if d["clean"] else f"{len(d['violations'])} violation(s)"
        print(f"verify: {state} ({total} checks)")

    _emit(args, report.to_dict(), render)
    return 0 if report.clean else 1


def _cmd_gc(args) -> int:
    session = open_heap(args.path, mode=READ_WRITE)
    try:
        report = session.request_gc()
        payload = {
            "live": report.live,
            "reclaimed": report.reclaimed,
            "log_bytes_before": report.log_bytes_before,
            "log_bytes_after": report.log_bytes_after,
        }
    finally:
        session.close()
    _emit(args, payload, lambda d: print(
        f"gc: live {d['live']}, reclaimed {d['reclaimed']}, "
        f"log {d['log_bytes_before']} -> {d['log_bytes_after']} bytes"))
    return 0


def _cmd_bench(args) -> int:
    session = open_heap(args.path, mode=READ_WRITE)
    try:
        result = run_bench(session, args.workload, args.ops, seed=args.seed,
                           threads=args.threads, baseline=args.baseline, batch=args.batch)
    finally:
        session.close()
    _emit(args, result.to_dict(), lambda d: print(
        f"workload {d['workload']}: {d['ops']} ops, fence_total {d['fence_total']}, "
        f"{d['fences_per_tx']} fences/tx, {d['reads']} reads, {d['writes']} writes, "
        f"{d['conflicts']} conflicts"))
    return 0


def _emit(args, payload: dict, render) -> None:
    if getattr(args, "json", False):
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
    else:
        render(payload)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heapctl", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("create", help="format a new heap file")
    p.add_argument("--path", required=True)
    p.add_argument("--size", required=True, type=int, help="device size in bytes")
    p.add_argument("--name", required=True)
    p.add_argument("--force", action="store_true", help="re-format an existing heap")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_create)

    p = sub.add_parser("info", help="print header, regions, stats, roots, plasses")
    p.add_argument("--path", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_info)

    p = sub.add_parser("verify", help="structural fsck; exit 1 on violations")
    p.add_argument("--path", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("gc", help="run a stop-the-world collection")
    p.add_argument("--path", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_gc)

    p = sub.add_parser("bench", help="run a key-value workload and report fence counts")
    p.add_argument("--path", required=True)
    p.add_argument("--workload", required=True, choices=WORKLOADS)
    p.add_argument("--ops", required=True, type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baseline", action="store_true",
                   help="eager per-store fencing instead of transactional commit")
    p.add_argument("--batch", type=int, default=1,
                   help="fields written per update transaction")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except UniheapError as exc:
        print(f"heapctl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"heapctl: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
