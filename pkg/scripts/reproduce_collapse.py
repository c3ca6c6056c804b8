"""Run simulate -> estimate -> fit -> report and print both panels as tables.

    python scripts/reproduce_collapse.py --out runs/collapse --seed 0
"""
import argparse
import csv
import json
import sys
from collections import defaultdict
from pathlib import Path

from impactlab.cli import main as cli


def table(path: Path, value: str):
    rows = defaultdict(dict)
    with open(path) as fh:
        for r in csv.DictReader(fh):
            rows[float(r["q_over_v_bin_center"])][float(r["t_bucket_days"])] = float(r[value])
    ts = sorted({t for v in rows.values() for t in v})
    print(f"{'Q/V':>10} " + " ".join(f"T={t:<9.4g}" for t in ts))
    for q in sorted(rows):
        print(f"{q:10.3e} " + " ".join(f"{rows[q].get(t, float('nan')):11.4e}" for t in ts))


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/collapse")
    ap.add_argument("--seed", default="0")
    ap.add_argument("--n-orders", default="1000000")
    ap.add_argument("--threads", default="1")
    args = ap.parse_args()
    common = ["--out", args.out, "--seed", args.seed, "--threads", args.threads]
    for cmd in (["simulate", "--n-orders", args.n_orders], ["estimate"], ["fit"], ["report"]):
        code = cli(cmd + common)
        if code:
            sys.exit(code)
    bundle = Path(args.out) / "report"
    print("\nmean impact E[eps dp | Q, T]")
    table(bundle / "left_panel.csv", "mean_impact")
    print("\nvariance V[eps dp | Q, T]")
    table(bundle / "right_panel.csv", "var_price_change")
    print("\ninset: plateau variance vs T")
    print((bundle / "inset.csv").read_text())
    fit = json.loads((Path(args.out) / "fit.json").read_text())
    print("fit:", json.dumps(fit["params"]), "stderr:", json.dumps({k: v for k, v in fit["std_err"].items()
                                                                   if not k.startswith("log10")}))
