"""``se-kge`` command line: ingest, se-metrics, train, eval, bucket-report.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
data or runtime errors.  Diagnostics go to standard error; data goes to the
requested files or to standard output.
"""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import build_config, describe_defaults, load_config
from .evaluation import (
    bucket_report_files,
    evaluate,
    write_bucket_report,
    write_se_csv,
)
from .evidence import BUCKET_MODES, ENTITY_PATH_MODES, evidence_scores
from .exceptions import ConfigError, KGDataError, ShapeError, TrainingError
from .kg import build_query_set, ingest
from .training import Checkpoint, fit

logger = logging.getLogger("sekge")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
SPLITS = ("train", "valid", "test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse reports usage problems with status 2; this tool uses 1.

    Abbreviated options are disabled so config overrides such as ``--n``
    are never mistaken for a prefix of a real option.
    """

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _add_threads(p):
    p.add_argument("--threads", type=int, default=None, metavar="N",
                   help="cap BLAS/OpenMP worker threads (default: library choice)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="se-kge", description="Semantic-evidence KG link prediction toolkit.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("ingest", help="load a dataset directory and report counts")
    p.add_argument("--data-dir", required=True, help="directory with train.txt, valid.txt, test.txt")
    p.add_argument("--stats", action="store_true",
                   help="print split,triples,entities_seen,relations_seen CSV to stdout")

    p = sub.add_parser("se-metrics", help="write per-query s_rel, s_ent, s_tri for one split")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--entity-paths", choices=ENTITY_PATH_MODES, default="directed",
                   help="edge directions walked when counting entity-level paths")

    p = sub.add_parser(
        "train", help="train a model and write a checkpoint directory",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Train with early stopping on filtered valid MRR.\n\n"
                    "Any config key can be overridden with --key value (dashes or\n"
                    "underscores).  Keys and defaults:\n\n" + describe_defaults(),
    )
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data-dir", help="dataset directory (overrides data_dir in the config)")
    p.add_argument("--out", required=True, help="checkpoint directory to create")
    _add_threads(p)

    p = sub.add_parser("eval", help="filtered evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--data-dir", help="defaults to the data_dir recorded in the checkpoint")
    p.add_argument("--out", help="write per-query ranks CSV here")
    p.add_argument("--tie-eps", type=float, default=0.0,
                   help="scores within this distance count as tied (default 0: exact)")
    _add_threads(p)

    p = sub.add_parser("bucket-report", help="mean rank per evidence bucket")
    p.add_argument("--ranks", required=True, help="ranks CSV from eval or an external model")
    p.add_argument("--se", required=True, help="CSV from se-metrics")
    p.add_argument("--mode", choices=BUCKET_MODES, default="three_even")
    p.add_argument("--out", help="output CSV (default: stdout)")
    return parser


def parse_overrides(tokens) -> dict[str, str]:
    """``--key value`` / ``--key=value`` pairs to a ``{key: value}`` dict."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or tok == "--":
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise UsageError(f"override --{key} needs a value")
            value = tokens[i + 1]
            i += 2
        out[key.replace("-", "_")] = value
    return out


def cmd_ingest(args) -> int:
    store = ingest(args.data_dir)
    for row in store.stats():
        logger.info("%s: %d triples, %d entities, %d relations", row["split"], row["triples"],
                    row["entities_seen"], row["relations_seen"])
    if args.stats:
        sys.stdout.write(store.stats_csv())
    return EXIT_OK


def cmd_se_metrics(args) -> int:
    store = ingest(args.data_dir)
    queries = build_query_set(store, args.split)
    scores = evidence_scores(store, queries, entity_paths=args.entity_paths)
    write_se_csv(args.out, store, queries, scores)
    logger.info("wrote %d rows to %s", len(queries), args.out)
    return EXIT_OK


def cmd_train(args, extra) -> int:
    overrides = parse_overrides(extra)
    if args.data_dir:
        overrides["data_dir"] = args.data_dir
    if args.config:
        config = load_config(args.config, overrides)
    else:
        config = build_config({}, overrides)
    if not config.data_dir:
        raise ConfigError("no dataset: pass --data-dir or set data_dir in the config")
    config = config.replace(data_dir=str(Path(config.data_dir).resolve()))
    store = ingest(config.data_dir)
    with _threads(args.threads):
        ck = fit(store, config, out_dir=args.out)
    logger.info("best valid MRR %.4f at epoch %d; checkpoint in %s", ck.valid_mrr, ck.epoch, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    ck = Checkpoint.load(args.checkpoint)
    data_dir = args.data_dir or ck.config.data_dir
    if not data_dir:
        raise ConfigError("checkpoint records no data_dir; pass --data-dir")
    store = ingest(data_dir)
    ck.check_store(store)
    model = ck.build_model()
    with _threads(args.threads):
        report, table = evaluate(model, store, args.split, ck.config.eval_batch_size, args.tie_eps)
    if args.out:
        table.write_csv(args.out, store)
    sys.stdout.write("metric,value\n")
    for k, v in report.as_dict().items():
        sys.stdout.write(f"{k},{v!r}\n")
    return EXIT_OK


def cmd_bucket_report(args) -> int:
    rows = bucket_report_files(args.ranks, args.se, args.mode)
    write_bucket_report(args.out or sys.stdout, rows)
    return EXIT_OK


def _threads(n):
    return threadpool_limits(limits=n) if n else nullcontext()


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        if not argv:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        args, extra = parser.parse_known_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        if args.command == "train":
            return cmd_train(args, extra)
        if extra:
            raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
        handler = {
            "ingest": cmd_ingest, "se-metrics": cmd_se_metrics, "eval": cmd_eval,
            "bucket-report": cmd_bucket_report,
        }[args.command]
        return handler(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KGDataError, ShapeError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
