#!/usr/bin/env python3
"""Single-fault detection statistics for weight and neuron faults.

Reproduces the detection-table quantities at desk scale: p(sdc), p(oob),
conditionals, precision/recall of the out-of-bound detector, p(due|oob), and
the MSB share of SDC and DUE events.

    python scripts/build_artifacts.py --outdir runs
    python scripts/detection_table.py --artifacts runs --epochs 150
"""

import argparse
import pathlib

from faultrange import container
from faultrange.campaign import run_campaign


def fmt(entry):
    if entry is None:
        return "      n/a"
    return f"{entry['value']:.5f}" if isinstance(entry, dict) else f"{entry:.5f}"


ROWS = ("p_sdc", "p_oob", "p_sdc_given_oob", "p_sdc_given_ib", "p_msb_given_sdc",
        "precision", "recall", "p_due", "p_due_given_oob", "p_msb_given_due")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--artifacts", default="runs")
    parser.add_argument("--epochs", type=int, default=150)
    parser.add_argument("--subset-size", type=int, default=100)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--bits", default="0:8",
                        help="bit positions; use 0:31 for the all-bits variant")
    parser.add_argument("--workers", type=int, default=2)
    args = parser.parse_args()

    art = pathlib.Path(args.artifacts)
    model = container.load_model(str(art / "model.rres"))
    dataset = container.load_dataset(str(art / "data.rres"))
    bounds = container.load_bounds(str(art / "bounds.json"))
    subset = container.load_subset(str(art / "subset.json"))["correct_indices"]
    subset = subset[:args.subset_size]

    from faultrange.cli import parse_bits
    bits = parse_bits(args.bits)

    reports = {}
    for kind in ("weight", "neuron"):
        reports[kind] = run_campaign(model, bounds, "none", dataset, subset, kind,
                                     1, bits, args.epochs, args.seed,
                                     workers=args.workers)
        container.save_report(reports[kind], str(art / f"detection_{kind}.json"))

    runs = reports["weight"]["counts"]["run_count"]
    print(f"\nsingle-fault detection, bits {args.bits}, {runs} injections per kind\n")
    print(f"{'':18s} {'weight':>9s} {'neuron':>9s}")
    for row in ROWS:
        print(f"{row:18s} {fmt(reports['weight']['derived'][row]):>9s} "
              f"{fmt(reports['neuron']['derived'][row]):>9s}")


if __name__ == "__main__":
    main()
