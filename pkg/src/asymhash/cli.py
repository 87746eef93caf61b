"""Command-line entry point: gen, train, encode, retrieve, eval.

Errors are written to stderr as ``asymhash: error: <kind>: <message>``;
the exit status is 0 only when the command completed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import FeatureFormatError, generate_synthetic, load_features, save_features
from .index import load_codes, pack, rank_all, save_codes
from .metrics import (
    RankedRelevance,
    mean_average_precision,
    pr_curve_by_radius,
    precision_at_k,
    recall_at_k,
    write_metrics_csv,
    write_pr_csv,
)
from .model import load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

log = logging.getLogger("asymhash")

MODEL_FILE = "model.ahm"
CODES_FILE = "codes.ahc"
REPORT_FILE = "report.csv"

# config-file key -> TrainConfig field
TRAIN_KEYS = {
    "bits": "bits",
    "lambda": "lam",
    "gamma": "gamma",
    "lr": "lr",
    "outer_iters": "outer_iters",
    "inner_epochs": "inner_epochs",
    "batch_size": "batch_size",
    "queries": "num_queries",
    "max_sweeps": "max_sweeps",
    "seed": "seed",
    "deterministic": "deterministic",
    "resample_omega": "resample_omega",
    "standardize": "standardize",
}
PATH_KEYS = {"input", "output"}


class CLIError(Exception):
    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(message)


def _nonneg_float(text):
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _pos_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _pos_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _k_list(text):
    return [_pos_int(part) for part in text.split(",") if part]


def _default_threads():
    env = os.environ.get("AHCL_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _read_features(path):
    if not Path(path).is_file():
        raise CLIError("io", f"no such file: {path}")
    try:
        return load_features(path)
    except FeatureFormatError as exc:
        raise CLIError("format", f"{path}: {exc}") from None


def _read_codes(path):
    if not Path(path).is_file():
        raise CLIError("io", f"no such file: {path}")
    try:
        return load_codes(path)
    except ValueError as exc:
        raise CLIError("format", str(exc)) from None


def cmd_gen(args):
    result = generate_synthetic(
        args.classes, args.per_class, args.dim, args.separation, args.noise,
        seed=args.seed, query_per_class=args.query_per_class,
    )
    db, queries = result if args.query_per_class else (result, None)
    save_features(db, args.output)
    print(f"wrote {args.output}: n={db.n} d={db.d} C={db.num_classes}")
    if queries is not None:
        if not args.query_output:
            raise CLIError("args", "--query-per-class needs --query-output")
        save_features(queries, args.query_output)
        print(f"wrote {args.query_output}: n={queries.n} d={queries.d} C={queries.num_classes}")


def _train_settings(args):
    settings = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError("config", f"{args.config}: {exc}") from None
        unknown = set(raw) - set(TRAIN_KEYS) - PATH_KEYS
        if unknown:
            raise CLIError("config", f"unknown config keys: {', '.join(sorted(unknown))}")
        settings.update(raw)
    for key in list(TRAIN_KEYS) + sorted(PATH_KEYS):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key in ("input", "output"):
        if key not in settings:
            raise CLIError("args", f"missing required setting {key!r}")
    return settings


def cmd_train(args):
    settings = _train_settings(args)
    cfg = TrainConfig(**{TRAIN_KEYS[k]: v for k, v in settings.items() if k in TRAIN_KEYS})
    ds = _read_features(settings["input"])
    try:
        cfg.validate(ds.n)
    except ValueError as exc:
        raise CLIError("config", str(exc)) from None
    out = Path(settings["output"])
    out.mkdir(parents=True, exist_ok=True)

    result = train(ds, cfg)
    save_checkpoint(result.checkpoint, out / MODEL_FILE)
    save_codes(pack(result.codes), out / CODES_FILE)
    result.report.write_csv(out / REPORT_FILE)
    last = result.report.records[-1]
    print(
        f"loss={last.loss!r} term1={last.similarity!r} term2={last.quantization!r} "
        f"term3={last.semantic!r} bits_flipped={last.bits_flipped}"
    )
    print(f"wrote {out / MODEL_FILE}, {out / CODES_FILE}, {out / REPORT_FILE}")


def cmd_encode(args):
    ckpt = load_checkpoint(args.model)
    ds = _read_features(args.input)
    if ds.d != ckpt.params.dim:
        raise CLIError("shape", f"features have d={ds.d} but the model expects d={ckpt.params.dim}")
    save_codes(pack(ckpt.encode(ds.features)), args.output)
    print(f"wrote {args.output}: n={ds.n} K={ckpt.params.bits}")


def cmd_retrieve(args):
    queries = _read_codes(args.queries)
    db = _read_codes(args.database)
    if queries.bits != db.bits:
        raise CLIError("shape", f"code length mismatch: queries K={queries.bits}, database K={db.bits}")
    k = args.k or db.n
    if args.exclude_self:
        # drop each query's own row by over-fetching one and filtering
        ranked = rank_all(queries, db, min(k + 1, db.n), args.threads)
        ranked = [[hit for hit in hits if hit[0] != qi][:k] for qi, hits in enumerate(ranked)]
    else:
        ranked = rank_all(queries, db, k, args.threads)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "rank", "db_id", "distance"])
        for qi, hits in enumerate(ranked):
            for rank, (idx, dist) in enumerate(hits, start=1):
                w.writerow([qi, rank, idx, dist])
    print(f"wrote {args.output}: {queries.n} queries, top-{k}")


def _read_results(path, m, n):
    if not Path(path).is_file():
        raise CLIError("io", f"no such file: {path}")
    lists = [[] for _ in range(m)]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["query_id", "rank", "db_id", "distance"]:
            raise CLIError("format", f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            qi, db_id = int(row["query_id"]), int(row["db_id"])
            if not (0 <= qi < m and 0 <= db_id < n):
                raise CLIError("ids", f"{path}: query {qi} / db {db_id} outside the label files")
            lists[qi].append((int(row["rank"]), db_id))
    return [[db_id for _, db_id in sorted(hits)] for hits in lists]


def cmd_eval(args):
    q_labels = _read_features(args.query_labels).labels
    db_labels = _read_features(args.db_labels).labels
    m, n = len(q_labels), len(db_labels)
    results = _read_results(args.results, m, n)

    relevance = q_labels[:, None] == db_labels[None, :]
    exclude = None
    if args.exclude_self:
        if m > n:
            raise CLIError("ids", "--exclude-self needs queries drawn from the database")
        exclude = np.arange(m)
        relevance[np.arange(m), np.arange(m)] = False

    ranked = []
    for qi, hits in enumerate(results):
        total = int(relevance[qi].sum())
        if total:
            ranked.append(RankedRelevance(relevance[qi][hits], total))
    if not ranked:
        raise CLIError("data", "no query has a relevant database item")

    rows = [("map", None, mean_average_precision(ranked, truncated=args.truncated_ap))]
    for k in args.k:
        rows.append(("precision", k, np.mean([precision_at_k(r, k) for r in ranked])))
    for k in args.k:
        rows.append(("recall", k, np.mean([recall_at_k(r, k) for r in ranked])))
    write_metrics_csv(rows, args.output)
    print(f"MAP={rows[0][2]:.4f}")

    if args.pr_output:
        if not (args.query_codes and args.db_codes):
            raise CLIError("args", "--pr-output needs --query-codes and --db-codes")
        qc, dc = _read_codes(args.query_codes), _read_codes(args.db_codes)
        if (qc.n, dc.n) != (m, n):
            raise CLIError("ids", "code files and label files disagree on sample counts")
        write_pr_csv(pr_curve_by_radius(qc, dc, relevance, exclude), args.pr_output)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asymhash", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic Gaussian-cluster feature file")
    p.add_argument("--classes", type=_pos_int, required=True)
    p.add_argument("--per-class", type=_pos_int, required=True)
    p.add_argument("--dim", type=_pos_int, required=True)
    p.add_argument("--separation", type=_nonneg_float, default=6.0,
                   help="minimum center distance in units of the noise sigma (default 6)")
    p.add_argument("--noise", type=_pos_float, default=1.0, help="noise sigma (default 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--query-per-class", type=_nonneg_int, default=0,
                   help="also draw this many held-out queries per class")
    p.add_argument("--query-output")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="learn the hash head and database codes")
    p.add_argument("-i", "--input", help="database feature file")
    p.add_argument("-o", "--output", help="output directory")
    p.add_argument("--config", help="JSON file with training settings; flags override it")
    p.add_argument("--bits", type=_pos_int, help="code length K (default 16; 16, 32 and 64 are the usual choices)")
    p.add_argument("--lambda", dest="lambda", type=_nonneg_float,
                   help="quantization weight (default 200)")
    p.add_argument("--gamma", type=_nonneg_float, help="semantic-loss weight (default 20)")
    p.add_argument("--lr", type=_pos_float, help="SGD learning rate (default 1e-4)")
    p.add_argument("--outer-iters", type=_pos_int, help="alternating rounds (default 50)")
    p.add_argument("--inner-epochs", type=_nonneg_int, help="SGD epochs per round (default 3)")
    p.add_argument("--batch-size", type=_pos_int, help="default 32")
    p.add_argument("--queries", type=_pos_int, help="sampled query count m (default min(n, 1000))")
    p.add_argument("--max-sweeps", type=_pos_int, help="column sweeps per code solve (default 20)")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-resample", dest="resample_omega", action="store_false", default=None,
                   help="keep the first query sample for every round")
    p.add_argument("--standardize", action="store_true", default=None,
                   help="standardize feature dimensions (stored in the model)")
    p.add_argument("--nondeterministic", dest="deterministic", action="store_false", default=None,
                   help="allow BLAS reductions (faster, not bit-reproducible across thread counts)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="binarize a feature file with a trained model")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("retrieve", help="rank database codes for each query code")
    p.add_argument("-q", "--queries", required=True)
    p.add_argument("-d", "--database", required=True)
    p.add_argument("-k", type=_pos_int, help="results per query (default: the whole database)")
    p.add_argument("--exclude-self", action="store_true",
                   help="queries are database rows 0..m-1; drop each query's own row")
    p.add_argument("--threads", type=_pos_int, default=_default_threads(),
                   help="worker threads (default $AHCL_THREADS or 1)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="MAP, P@k, R@k and the PR curve by Hamming radius")
    p.add_argument("-r", "--results", required=True, help="CSV written by 'retrieve'")
    p.add_argument("--query-labels", required=True, help="query feature file (labels are read from it)")
    p.add_argument("--db-labels", required=True, help="database feature file")
    p.add_argument("-k", type=_k_list, default=[10, 50, 100], help="comma-separated cutoffs")
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument("--truncated-ap", action="store_true",
                   help="average precision over the first n_i ranks instead of at each hit")
    p.add_argument("--query-codes")
    p.add_argument("--db-codes")
    p.add_argument("--pr-output")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except CLIError as exc:
        print(f"asymhash: error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"asymhash: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
