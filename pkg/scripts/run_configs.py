"""Run every experiment config in configs/ through the CLI and print the exit codes.

    python3 scripts/run_configs.py [--threads 4] [--out out] [configs/*.json ...]
"""

import argparse
from pathlib import Path

from rsjd.cli_runner import main

ROOT = Path(__file__).resolve().parents[1]


def run(paths, threads, out):
    codes = {}
    for path in paths:
        target = Path(out) / Path(path).stem
        codes[Path(path).name] = main(["run", str(path), "--threads", str(threads), "--out", str(target)])
        print(f"{Path(path).name:45s} exit {codes[Path(path).name]}  -> {target}", flush=True)
    return codes


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("configs", nargs="*")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default=str(ROOT / "out"))
    args = ap.parse_args()
    paths = args.configs or sorted((ROOT / "configs").glob("*.json"))
    run(paths, args.threads, args.out)
