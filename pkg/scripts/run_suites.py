#!/usr/bin/env python3
"""Run every experiment config in configs/ and collect the reports in one directory."""

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

from synthreg.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent


def run(config: Path, out_dir: Path, jobs: int) -> int:
    data = json.loads(config.read_text())
    outputs = data.setdefault("outputs", {})
    outputs["report"] = str(out_dir / f"{config.stem}_report.json")
    if "curves" in outputs:
        outputs["curves"] = str(out_dir / f"{config.stem}_curves")
    resolved = out_dir / config.name
    resolved.write_text(json.dumps(data, indent=2))
    with open(out_dir / f"{config.stem}.log", "w") as log, contextlib.redirect_stdout(log):
        return cli_main(["simulate", "--config", str(resolved), "--jobs", str(jobs)])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("configs", nargs="*", help="config files (default: all of configs/)")
    args = ap.parse_args()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    configs = [Path(c) for c in args.configs] or sorted((ROOT / "configs").glob("*.json"))
    status = 0
    for config in configs:
        code = run(config, out_dir, args.jobs)
        reports = json.loads((out_dir / f"{config.stem}_report.json").read_text())
        worst = max(r["regret"] for r in reports)
        print(f"{config.stem}: {len(reports)} cells, max regret {worst:.4g}, exit {code}")
        status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(main())
