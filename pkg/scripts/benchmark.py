"""Time inference on corpus models over several seeds.

Usage: python scripts/benchmark.py [--runs N] [--budget-s S] [--json] [MODEL ...]

Models are corpus names (e.g. lockserv_single) or paths to .pfz files.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

from phaseforge.frontend import load
from phaseforge.infer import InferConfig, infer

CORPUS = Path(__file__).resolve().parents[1] / "src" / "phaseforge" / "corpus"
DEFAULT = ["lockserv_single", "lockserv_multi", "kv_basic", "ring"]


def resolve(name: str) -> Path:
    p = Path(name)
    return p if p.suffix == ".pfz" else CORPUS / f"{name}.pfz"


def bench(path: Path, runs: int, budget_s: float) -> dict:
    low = load(path)
    rows = []
    for seed in range(runs):
        r = infer(low.ts, low.structure, low.safety, InferConfig(seed=seed, budget_s=budget_s))
        rows.append({"seed": seed, "status": r.status, **r.stats.to_json()})
    secs = [row["seconds"] for row in rows]
    return {
        "model": path.stem,
        "runs": rows,
        "mean_s": statistics.mean(secs),
        "stdev_s": statistics.stdev(secs) if len(secs) > 1 else 0.0,
    }


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("models", nargs="*", default=DEFAULT)
    ap.add_argument("--runs", type=int, default=3)
    ap.add_argument("--budget-s", type=float, default=600.0)
    ap.add_argument("--json", action="store_true", help="print JSON instead of a table")
    ns = ap.parse_args(argv)
    results = [bench(resolve(m), ns.runs, ns.budget_s) for m in ns.models]
    if ns.json:
        json.dump(results, sys.stdout, indent=2)
        print()
        return 0
    print(f"{'model':28} {'status':10} {'mean s':>8} {'stdev':>7} {'lemmas':>7} {'queries':>8}")
    for res in results:
        statuses = {row["status"] for row in res["runs"]}
        lemmas = statistics.mean(row["lemmas"] for row in res["runs"])
        queries = statistics.mean(row["queries"] for row in res["runs"])
        print(
            f"{res['model']:28} {','.join(sorted(statuses)):10} {res['mean_s']:8.2f} "
            f"{res['stdev_s']:7.2f} {lemmas:7.1f} {queries:8.1f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
