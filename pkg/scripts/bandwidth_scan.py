"""How the two-circles order-statistic p-values move with KDE bandwidth and sample.

    python scripts/bandwidth_scan.py --bandwidths 0.1,0.15,0.2 --seeds 0-9
"""
import argparse
import json

import numpy as np

from rstopo.pipeline import two_circles_pipeline
from rstopo.replication import Schedule


def _seeds(text):
    if "-" in text:
        a, b = text.split("-")
        return list(range(int(a), int(b) + 1))
    return [int(s) for s in text.split(",")]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--bandwidths", default="0.1,0.15,0.2")
    ap.add_argument("--seeds", default="0-9")
    ap.add_argument("--schedule", default="100,20,10")
    ap.add_argument("--essential", default="close", choices=["close", "exclude"])
    ap.add_argument("--json", default=None)
    args = ap.parse_args()
    nb, nr, nR = map(int, args.schedule.split(","))
    rows = []
    for bw in map(float, args.bandwidths.split(",")):
        for seed in _seeds(args.seeds):
            res = two_circles_pipeline(seed=seed, bandwidth=bw,
                                       schedule=Schedule(1000, nb, nr, nR, seed),
                                       essential=args.essential)
            p = res.report.pvalues
            rows.append({"bandwidth": bw, "seed": seed, "N": res.ppd.N, "p": p.tolist(),
                         "h1_prominent": res.h1_prominent})
            print(f"bw={bw:<5} seed={seed:<3} N={res.ppd.N:<4} h1={res.h1_prominent} "
                  + " ".join(f"{x:.3f}" for x in p), flush=True)
    for bw in sorted({r["bandwidth"] for r in rows}):
        P = np.array([r["p"] for r in rows if r["bandwidth"] == bw])
        print(f"bw={bw}: median p = " + " ".join(f"{x:.3f}" for x in np.median(P, axis=0)))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
