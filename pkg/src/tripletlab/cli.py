"""Command-line front end.

Subcommands: ``train`` (one experiment from a config file), ``compare``
(a loss-variant grid), ``bernoulli`` (false-negative risk tables), and
``diagnose`` (score an external embedding/label dump). Exit codes: 0 on
success, 1 on invalid input, 2 on runtime failure. The only randomness is
the config/--seed value.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .data import read_labeled_embeddings
from .diagnostics import (
    class_divergence,
    clustering_quality,
    false_negative_frequencies,
    single_view_rank_record,
)
from .errors import TripletLabError
from .harness import (
    cmd_bernoulli,
    compare_grid,
    load_config,
    loss_variant_id,
    parse_grid_text,
    run_experiment,
    GRID_COLUMNS,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripletlab",
        description="Truncated-triplet metric learning lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one experiment from a config file")
    train.add_argument("--config", required=True, help="path to key=value config")
    train.add_argument("--output", default=None, help="output directory override")
    train.add_argument("--seed", type=int, default=None, help="seed override")

    compare = sub.add_parser("compare", help="run a loss-variant grid")
    compare.add_argument("--config", required=True)
    compare.add_argument("--grid", required=True,
                         help="file with one comma-separated loss override set per line")
    compare.add_argument("--output", default=None)
    compare.add_argument("--seed", type=int, default=None)

    bern = sub.add_parser("bernoulli", help="false-negative risk table")
    bern.add_argument("--m", type=int, required=True, help="negatives per anchor")
    bern.add_argument("--p", type=float, required=True,
                      help="probability a negative shares the anchor's class")
    bern.add_argument("--ks", required=True, help="comma-separated ranks")
    bern.add_argument("--oracle", action="store_true",
                      help="also evaluate the exact arbitrary-precision oracle")

    diag = sub.add_parser("diagnose", help="score an embedding/label dump")
    diag.add_argument("--embeddings", required=True)
    diag.add_argument("--labels", required=True)
    diag.add_argument("--k", type=int, required=True, help="deputy rank")
    diag.add_argument("--variant", default="rank_k",
                      choices=("rank_k", "smoothed_rank_k", "hardest"))
    diag.add_argument("--batches", type=int, default=200)
    diag.add_argument("--batch-size", type=int, default=24)
    diag.add_argument("--seed", type=int, default=0)
    return parser


def _run_train(args) -> int:
    config = load_config(args.config, output_dir=args.output)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    report, _ = run_experiment(config)
    print(f"config_hash={config.config_hash()}")
    print(f"output_dir={config.output_dir}")
    for key, value in report.to_dict().items():
        print(f"{key}={value}")
    return 0


def _run_compare(args) -> int:
    config = load_config(args.config, output_dir=args.output)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    with open(args.grid, "r", encoding="utf-8") as fh:
        variants = parse_grid_text(fh.read(), config.loss_config(), config.batch_size)
    rows = compare_grid(config, variants)
    print(",".join(GRID_COLUMNS))
    for row in rows:
        print(",".join(
            "" if row[col] is None else
            repr(row[col]) if isinstance(row[col], float) else str(row[col])
            for col in GRID_COLUMNS))
    return 0


def _run_bernoulli(args) -> int:
    try:
        ks = [int(part) for part in args.ks.split(",") if part.strip()]
    except ValueError:
        raise TripletLabError(f"--ks must be comma-separated integers, got {args.ks!r}")
    if not ks:
        raise TripletLabError("--ks is empty")
    doc = cmd_bernoulli(args.m, args.p, ks, with_oracle=args.oracle)
    print(f"m={doc['m']} p={doc['p']!r}")
    for row in doc["rows"]:
        line = f"k={row['k']} tail={row['tail']!r}"
        if "oracle" in row:
            line += f" oracle={row['oracle']!r}"
        if "reported" in row:
            line += f" reported={row['reported']!r}"
        print(line)
    for note in doc["notes"]:
        print(f"note: {note}")
    return 0


def _run_diagnose(args) -> int:
    embeddings, labels = read_labeled_embeddings(args.embeddings, args.labels)
    n = embeddings.shape[0]
    batch_size = min(args.batch_size, n)
    if batch_size < 2:
        raise TripletLabError("need at least two embedding rows")
    rng = np.random.default_rng(args.seed)
    records = []
    for _ in range(args.batches):
        idx = rng.choice(n, size=batch_size, replace=False)
        records.append(single_view_rank_record(embeddings[idx], labels[idx]))
    pr_a, pr_b, counts = false_negative_frequencies(records, args.k, args.variant)
    num_classes = int(np.unique(labels).size)
    nmi, ari = clustering_quality(embeddings, labels, num_clusters=num_classes,
                                  seed=args.seed)
    result = {
        "num_rows": int(n),
        "num_classes": num_classes,
        "k": args.k,
        "variant": args.variant,
        "seed": args.seed,
        "class_divergence": class_divergence(embeddings, labels),
        "nmi": nmi,
        "ari": ari,
        "pr_omega_given_a": pr_a,
        "pr_omega_given_b": pr_b,
        "counts": counts,
    }
    print(json.dumps(result, sort_keys=True, indent=2))
    return 0


_DISPATCH = {
    "train": _run_train,
    "compare": _run_compare,
    "bernoulli": _run_bernoulli,
    "diagnose": _run_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, nonzero for usage errors
        return 0 if exc.code in (0, None) else 1
    try:
        return _DISPATCH[args.command](args)
    except TripletLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
