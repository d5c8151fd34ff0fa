"""Objective, gap and wall time of each method on the bundled fixtures.

    python3 scripts/run_bench.py --methods sdp,rh,bnb --out results/bench.json
"""

import argparse
from pathlib import Path

from hucsdp.fixtures import BUNDLED, bundled
from hucsdp.pipeline import PipelineOptions, bench, format_table, report_json


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--methods", default="sdp,rh,bnb")
    ap.add_argument("--only", help="comma list of fixture names")
    ap.add_argument("--time-limit", type=float, default=600.0, help="branch-and-bound budget per fixture (s)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    names = args.only.split(",") if args.only else [s.name for s in BUNDLED]
    report = bench([bundled(n) for n in names], args.methods.split(","),
                   PipelineOptions(time_limit=args.time_limit), jobs=args.jobs)
    print(format_table(report))
    for row in report["rows"]:
        if "hamming_rh_bnb" in row:
            print(f"{row['instance']}: RH and BB schedules differ in {row['hamming_rh_bnb']} (hour, plant) slots")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(report_json(report) + "\n")


if __name__ == "__main__":
    main()
