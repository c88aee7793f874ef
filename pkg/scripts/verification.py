"""Verification error of per-ANO subsidy estimates versus the subsidy fraction of ANO 1.

``--full`` uses the full catalog of 10^7 files (about a minute); the default
is 10^5 files.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from cachesub.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("out"))
    ap.add_argument("--full", action="store_true")
    args = ap.parse_args()
    name = "verification_full" if args.full else "verification"
    raise SystemExit(main(["coalition-verify", "--scenario", str(ROOT / "scenarios" / f"{name}.yaml"),
                           "--out", str(args.out / name)]))
