"""Train the desk-scale models and run the four trend experiments.

    python3 scripts/run_desk_suite.py --cache runs/models --out runs/desk.json
"""

import argparse
import json
import logging
import time
from pathlib import Path

from binloc.experiments import TREND_CRITERIA
from binloc.signal_io import atomic_write_text


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cache", default="runs/models", help="directory for trained model bundles")
    ap.add_argument("--out", default="runs/desk.json", help="summary JSON path")
    ap.add_argument("--only", nargs="*", default=None, help="subset of experiment names")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    results = {}
    for name, fn in TREND_CRITERIA.items():
        if args.only and name not in args.only:
            continue
        t0 = time.time()
        ok, details = fn(args.cache)
        results[name] = {"passed": ok, **details}
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {details}  ({time.time() - t0:.0f} s)", flush=True)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(args.out, json.dumps(results, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
