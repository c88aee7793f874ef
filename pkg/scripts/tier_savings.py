"""Savings of cache tier subsets versus the cost factor for both fanouts.

Writes ``out/<scenario>/tradeoff.csv`` for both scenarios.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from cachesub.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(out: Path) -> None:
    for name in ("tier_savings_e1_100", "tier_savings_e1_10"):
        main(["tradeoff", "--scenario", str(ROOT / "scenarios" / f"{name}.yaml"),
              "--out", str(out / name)])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("out"))
    run(ap.parse_args().out)
