"""Compare inference with and without self-loops for disabled actions.

Usage: python scripts/ablation.py [--seeds N]

Runs the lock service (multi) structure and its variant whose disabled
actions get self-loops, and prints lemma and query counts side by side.
"""

from __future__ import annotations

import argparse
import statistics
import sys

from benchmark import bench, resolve

PAIR = ("lockserv_multi", "lockserv_multi_selfloops")


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--budget-s", type=float, default=600.0)
    ns = ap.parse_args(argv)
    stats = {}
    for name in PAIR:
        res = bench(resolve(name), ns.seeds, ns.budget_s)
        stats[name] = {
            "seconds": res["mean_s"],
            "lemmas": statistics.mean(r["lemmas"] for r in res["runs"]),
            "queries": statistics.mean(r["queries"] for r in res["runs"]),
            "statuses": {r["status"] for r in res["runs"]},
        }
    base, loops = (stats[n] for n in PAIR)
    for name in PAIR:
        s = stats[name]
        print(f"{name:28} {s['seconds']:8.2f} s {s['lemmas']:7.1f} lemmas {s['queries']:9.1f} queries")
    print(
        f"ratio (self-loops / original): time {loops['seconds'] / base['seconds']:.2f}, "
        f"lemmas {loops['lemmas'] / base['lemmas']:.2f}, queries {loops['queries'] / base['queries']:.2f}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
