"""Command-line pipeline driver.

Subcommands cover the full flow: synthesize data, train the fixture,
evaluate, extract activation bounds, inspect weight bit distributions, run
fault campaigns, render reports, and dump feature maps for debugging.

Exit codes: 0 success, 2 usage error, 3 missing input file, 4 malformed
artifact (format/schema), 5 invalid configuration, 6 training divergence,
70 unexpected internal error.
"""

import argparse
import csv
import os
import secrets
import sys

from faultrange import container
from faultrange.campaign import report_risk, run_campaign
from faultrange.data import generate_dataset, load_mnist
from faultrange.errors import ConfigError, FormatError, TrainingError
from faultrange.faults import load_plan, weight_bit_histogram
from faultrange.graph import dump_fmaps, format_f32
from faultrange.metrics import severity_analysis
from faultrange.protect import POLICIES, extract_bounds
from faultrange.train import evaluate_accuracy, train_fixture

EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_FORMAT = 4
EXIT_CONFIG = 5
EXIT_TRAINING = 6
EXIT_INTERNAL = 70

SEED_ENV_VAR = "FAULTRANGE_SEED"


def parse_bits(text: str) -> list[int]:
    """Bit list syntax: comma-separated items, each N or inclusive A:B."""
    bits: set[int] = set()
    for item in text.split(","):
        item = item.strip()
        if ":" in item:
            lo_text, hi_text = item.split(":", 1)
            lo, hi = int(lo_text), int(hi_text)
            if lo > hi:
                raise ConfigError(f"empty bit range {item!r}")
            bits.update(range(lo, hi + 1))
        elif item:
            bits.add(int(item))
    if not bits:
        raise ConfigError(f"no bit positions in {text!r}")
    if min(bits) < 0 or max(bits) > 31:
        raise ConfigError(f"bit positions must lie in [0, 31], got {sorted(bits)}")
    return sorted(bits)


def resolve_seed(value) -> int:
    """Explicit flag, else FAULTRANGE_SEED, else a fresh seed (printed)."""
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        return int(env)
    seed = secrets.randbelow(2**32)
    print(f"seed: {seed} (chosen randomly; pass --seed to reproduce)")
    return seed


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=96)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faultrange",
        formatter_class=_formatter,
        description="Soft-error resilience toolkit: range-supervision protection, "
                    "bit-exact fault injection, and campaign evaluation for CNN classifiers.",
        epilog="exit codes: 0 ok, 2 usage, 3 missing file, 4 bad artifact, "
               "5 bad configuration, 6 training divergence, 70 internal",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", formatter_class=_formatter,
                       help="generate the synthetic shapes dataset (or convert MNIST IDX files)")
    p.add_argument("--seed", type=int, default=None, help="generation seed")
    p.add_argument("--per-class", type=int, default=100, help="images per class")
    p.add_argument("--noise", type=float, default=0.1, help="uniform noise amplitude")
    p.add_argument("--mnist-images", default=None, help="IDX image file to convert instead")
    p.add_argument("--mnist-labels", default=None, help="IDX label file to convert instead")
    p.add_argument("--out", required=True, help="output dataset container")

    p = sub.add_parser("train-fixture", formatter_class=_formatter,
                       help="train the classifier fixture")
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--seed", type=int, default=None, help="training seed")
    p.add_argument("--epochs", type=int, default=10, help="training epochs")
    p.add_argument("--lr", type=float, default=0.03, help="SGD learning rate")
    p.add_argument("--out", required=True, help="output model container")

    p = sub.add_parser("eval", formatter_class=_formatter,
                       help="evaluate accuracy and emit the correct-subset file")
    p.add_argument("--model", required=True, help="model container")
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--out", required=True, help="output subset JSON")

    p = sub.add_parser("extract-bounds", formatter_class=_formatter,
                       help="profile activation bounds at the protection points")
    p.add_argument("--model", required=True, help="model container")
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--split", choices=("train", "test", "all"), default="train")
    p.add_argument("--limit", type=int, default=None,
                   help="profile at most this many images")
    p.add_argument("--out", required=True, help="output bounds JSON")

    p = sub.add_parser("bit-hist", formatter_class=_formatter,
                       help="per-bit 1-state fractions over conv2d weights")
    p.add_argument("--model", required=True, help="model container")
    p.add_argument("--bits", default="0:8", help="bit positions (N, A:B, comma lists)")
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("run", formatter_class=_formatter, help="run a fault campaign")
    p.add_argument("--model", required=True, help="model container")
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--bounds", required=True, help="bounds JSON")
    p.add_argument("--policy", choices=POLICIES, required=True)
    p.add_argument("--kind", choices=("weight", "neuron"), required=True)
    p.add_argument("--k", type=int, required=True, help="faults per plan (0 = fault-free)")
    p.add_argument("--bits", default="0:8", help="bit positions (N, A:B, comma lists)")
    p.add_argument("--epochs", type=int, default=100, help="campaign epochs")
    p.add_argument("--seed", type=int, default=None, help="campaign master seed")
    p.add_argument("--subset", default=None,
                   help="correct-subset JSON from eval (default: computed on the test split)")
    p.add_argument("--workers", type=int, default=1, help="parallel campaign workers")
    p.add_argument("--include-bias", action="store_true",
                   help="make bias tensors eligible for weight faults")
    p.add_argument("--replay", default=None, help="replay a saved fault plan JSON")
    p.add_argument("--out", required=True, help="output report JSON")

    p = sub.add_parser("report", formatter_class=_formatter,
                       help="render campaign reports as a table / CSV")
    p.add_argument("--report", action="append", required=True, dest="reports",
                   help="report JSON (repeatable)")
    p.add_argument("--csv", default=None, help="write rows to this CSV")
    p.add_argument("--clusters", default=None, help="cluster config JSON for severity")
    p.add_argument("--p-failure", type=float, default=None,
                   help="per-fault-type failure probability for the risk column")

    p = sub.add_parser("dump-fmaps", formatter_class=_formatter,
                       help="write per-layer feature maps as text grids")
    p.add_argument("--model", required=True, help="model container")
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--index", type=int, default=0, help="image index")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def cmd_gen_data(args) -> int:
    if (args.mnist_images is None) != (args.mnist_labels is None):
        raise ConfigError("--mnist-images and --mnist-labels must be given together")
    if args.mnist_images is not None:
        dataset = load_mnist(args.mnist_images, args.mnist_labels)
    else:
        dataset = generate_dataset(resolve_seed(args.seed), args.per_class, args.noise)
    container.save_dataset(dataset, args.out)
    print(f"wrote {args.out}: {len(dataset)} images, id {dataset.dataset_id}")
    return 0


def cmd_train_fixture(args) -> int:
    dataset = container.load_dataset(args.data)
    seed = resolve_seed(args.seed)
    model, stats = train_fixture(dataset, seed, args.epochs, args.lr)
    container.save_model(model, args.out)
    print(f"wrote {args.out}: train accuracy {stats.train_accuracy:.4f}, "
          f"test accuracy {stats.test_accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    model = container.load_model(args.model)
    dataset = container.load_dataset(args.data)
    indices = dataset.split_indices(args.split)
    accuracy, correct = evaluate_accuracy(model, dataset, indices)
    container.save_subset({
        "dataset_id": dataset.dataset_id,
        "split": args.split,
        "accuracy": accuracy,
        "correct_indices": correct,
    }, args.out)
    print(f"wrote {args.out}: accuracy {accuracy:.4f} "
          f"({len(correct)}/{len(indices)} correct)")
    return 0


def cmd_extract_bounds(args) -> int:
    model = container.load_model(args.model)
    dataset = container.load_dataset(args.data)
    indices = list(dataset.split_indices(args.split))
    if args.limit is not None:
        indices = indices[:args.limit]
    profile = extract_bounds(model, dataset, indices)
    container.save_bounds(profile, args.out)
    spans = ", ".join(f"{p}: [{format_f32(lo)}, {format_f32(up)}]"
                      for p, (lo, up) in sorted(profile.entries.items()))
    print(f"wrote {args.out}: {spans}")
    return 0


def cmd_bit_hist(args) -> int:
    model = container.load_model(args.model)
    fractions = weight_bit_histogram(model, parse_bits(args.bits))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bit", "fraction_ones"])
        for bit, fraction in sorted(fractions.items()):
            writer.writerow([bit, repr(fraction)])
    print(f"wrote {args.out}: {len(fractions)} bit positions")
    return 0


def cmd_run(args) -> int:
    model = container.load_model(args.model)
    dataset = container.load_dataset(args.data)
    bounds = container.load_bounds(args.bounds)
    seed = resolve_seed(args.seed)
    if args.subset is not None:
        subset_payload = container.load_subset(args.subset)
        if subset_payload["dataset_id"] != dataset.dataset_id:
            raise ConfigError(
                f"subset was computed on {subset_payload['dataset_id']!r}, "
                f"not {dataset.dataset_id!r}")
        subset = subset_payload["correct_indices"]
    else:
        accuracy, subset = evaluate_accuracy(model, dataset, dataset.test_indices)
        print(f"computed correct subset on the fly: accuracy {accuracy:.4f}, "
              f"{len(subset)} images")
    replay_plan = load_plan(args.replay) if args.replay else None
    report = run_campaign(
        model, bounds, args.policy, dataset, subset, args.kind, args.k,
        parse_bits(args.bits), args.epochs, seed, workers=args.workers,
        include_bias=args.include_bias, replay_plan=replay_plan)
    container.save_report(report, args.out)
    derived = report["derived"]

    def show(entry):
        return "n/a" if entry is None else f"{entry['value']:.4f}"

    print(f"wrote {args.out}: runs {report['counts']['run_count']}, "
          f"p(sdc) {show(derived['p_sdc'])}, p(due) {show(derived['p_due'])}, "
          f"p(oob) {show(derived['p_oob'])}")
    return 0


CSV_COLUMNS = [
    "policy", "kind", "k", "bits", "epochs", "run_count", "sdc_count", "due_count",
    "oob_count", "p_sdc", "p_sdc_lo", "p_sdc_hi", "p_due", "p_oob",
    "p_sdc_given_oob", "p_sdc_given_ib", "p_due_given_oob",
    "precision", "recall", "p_msb_given_sdc", "p_msb_given_due",
    "critical_sdc_count", "critical_fraction", "risk",
]


def _derived_value(report, key):
    entry = report["derived"][key]
    return "" if entry is None else repr(entry["value"])


def render_bits(bits) -> str:
    """Compress a sorted bit list back into parse_bits syntax (ranges + commas)."""
    if not bits:
        return ""
    runs = [[bits[0], bits[0]]]
    for b in bits[1:]:
        if b == runs[-1][1] + 1:
            runs[-1][1] = b
        else:
            runs.append([b, b])
    return ",".join(str(a) if a == b else f"{a}:{b}" for a, b in runs)


def cmd_report(args) -> int:
    clusters = container.load_clusters(args.clusters) if args.clusters else None
    rows = []
    for path in args.reports:
        report = container.load_report(path)
        config = report["config"]
        row = {
            "policy": config["policy"], "kind": config["kind"], "k": config["k"],
            "bits": render_bits(config["bits"]),
            "epochs": config["epochs"],
            "run_count": report["counts"]["run_count"],
            "sdc_count": report["counts"]["sdc_count"],
            "due_count": report["counts"]["due_count"],
            "oob_count": report["counts"]["oob_count"],
        }
        for key in ("p_sdc", "p_due", "p_oob", "p_sdc_given_oob", "p_sdc_given_ib",
                    "p_due_given_oob", "precision", "recall",
                    "p_msb_given_sdc", "p_msb_given_due"):
            row[key] = _derived_value(report, key)
        entry = report["derived"]["p_sdc"]
        row["p_sdc_lo"] = repr(entry["lo"]) if entry else ""
        row["p_sdc_hi"] = repr(entry["hi"]) if entry else ""
        row["critical_sdc_count"] = row["critical_fraction"] = row["risk"] = ""
        severity_weight = 1.0
        if clusters is not None:
            result = severity_analysis(report["confusions"], *clusters)
            row["critical_sdc_count"] = result.critical_count
            row["critical_fraction"] = ("" if result.critical_fraction is None
                                        else repr(result.critical_fraction))
            severity_weight = result.critical_fraction or 0.0
        if args.p_failure is not None:
            row["risk"] = repr(report_risk(report, args.p_failure, severity_weight))
        rows.append(row)

    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in CSV_COLUMNS}
    print("  ".join(c.ljust(widths[c]) for c in CSV_COLUMNS))
    for row in rows:
        print("  ".join(str(row[c]).ljust(widths[c]) for c in CSV_COLUMNS))

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.csv}: {len(rows)} rows")
    return 0


def cmd_dump_fmaps(args) -> int:
    model = container.load_model(args.model)
    dataset = container.load_dataset(args.data)
    if not 0 <= args.index < len(dataset):
        raise ConfigError(f"image index {args.index} outside dataset of {len(dataset)}")
    written = dump_fmaps(model, dataset.images[args.index], args.out)
    print(f"wrote {len(written)} feature-map files under {args.out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-fixture": cmd_train_fixture,
    "eval": cmd_eval,
    "extract-bounds": cmd_extract_bounds,
    "bit-hist": cmd_bit_hist,
    "run": cmd_run,
    "report": cmd_report,
    "dump-fmaps": cmd_dump_fmaps,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except FormatError as exc:
        print(f"error: format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"error: training: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
