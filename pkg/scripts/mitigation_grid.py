#!/usr/bin/env python3
"""SDC/DUE rates for every restriction policy at fault counts 1 and 10.

Produces the mitigation-experiment grid (and optionally the severity overlay
given a cluster config), one campaign per (kind, k, policy) cell:

    python scripts/mitigation_grid.py --artifacts runs \\
        --clusters configs/clusters_synthetic.json --csv runs/mitigation.csv
"""

import argparse
import csv
import pathlib

from faultrange import container
from faultrange.campaign import run_campaign
from faultrange.metrics import severity_analysis
from faultrange.protect import POLICIES


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--artifacts", default="runs")
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--subset-size", type=int, default=100)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--ks", default="1,10")
    parser.add_argument("--clusters", default=None)
    parser.add_argument("--csv", default=None)
    parser.add_argument("--workers", type=int, default=2)
    args = parser.parse_args()

    art = pathlib.Path(args.artifacts)
    model = container.load_model(str(art / "model.rres"))
    dataset = container.load_dataset(str(art / "data.rres"))
    bounds = container.load_bounds(str(art / "bounds.json"))
    subset = container.load_subset(str(art / "subset.json"))["correct_indices"]
    subset = subset[:args.subset_size]
    clusters = container.load_clusters(args.clusters) if args.clusters else None

    rows = []
    for kind in ("weight", "neuron"):
        for k in (int(x) for x in args.ks.split(",")):
            for policy in POLICIES:
                report = run_campaign(model, bounds, policy, dataset, subset, kind,
                                      k, range(9), args.epochs, args.seed,
                                      workers=args.workers)
                derived = report["derived"]
                row = {
                    "kind": kind, "k": k, "policy": policy,
                    "runs": report["counts"]["run_count"],
                    "p_sdc": derived["p_sdc"]["value"],
                    "p_due": derived["p_due"]["value"],
                }
                if clusters:
                    sev = severity_analysis(report["confusions"], *clusters)
                    row["critical_sdc"] = sev.critical_count
                    row["critical_fraction"] = sev.critical_fraction
                rows.append(row)
                print("  ".join(f"{key}={value}" for key, value in row.items()))

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
