"""Shadow price of intermediate uplinks and CP subsidies as their capacity grows.

Runs the capacity sweep of ``scenarios/capacity_sweep.yaml`` (a few minutes on
one core; set CACHESUB_WORKERS to use more) and prints one line per point.
"""
from __future__ import annotations

import argparse
import csv
from pathlib import Path

from cachesub.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("out"))
    args = ap.parse_args()
    out = args.out / "capacity_sweep"
    code = main(["optimize", "--scenario", str(ROOT / "scenarios" / "capacity_sweep.yaml"),
                 "--out", str(out)])
    if code:
        raise SystemExit(code)
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    print(f"{'capacity':>9} {'beta_int':>10} {'sub CP1':>9} {'sub CP2':>9}")
    for r in rows:
        print(f"{r['uplink_cap']:>9} {float(r['beta_int']):10.3g} "
              f"{float(r.get('subsidy_cp1') or 'nan'):9.1f} {float(r.get('subsidy_cp2') or 'nan'):9.1f}")
