"""Command-line pipeline: gen-data, build-table, train, eval, report.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 checkpoint/corpus
compatibility error, 1 anything else. Option precedence is flags over a
--config key=value file over the built-in defaults, and every command is
deterministic given its seed and inputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import corpus as corpus_io
from .checkpoint import load_checkpoint
from .corpus import (CorpusBundle, CorpusConfig, build_complication_table, filter_top_k,
                     generate_synthetic_corpus, load_corpus_dir, split_indices, write_table)
from .errors import CompatibilityError, ConfigError, DataError
from .metrics import format_metric_table, metric_table, read_predictions, write_predictions
from .trainer import (TrainConfig, decode_predictions, model_from_checkpoint, save_model,
                      train)

CHECKPOINT_NAME = "model.ckpt"
REPORT_NAME = "report.json"
PREDICTIONS_NAME = "predictions.jsonl"
METRICS_NAME = "metrics.txt"


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path) as fh:
            for ln, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, val = line.partition("=")
                if not sep:
                    raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
                values[key.strip()] = val.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def _apply_config_file(subparsers: dict[str, argparse.ArgumentParser], argv: list[str]) -> None:
    """Pre-scan for --config and install its values as defaults on the
    invoked subcommand's parser, so real flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    command = next((a for a in argv if a in subparsers), None)
    if command is None:
        return
    sub = subparsers[command]
    valid = {a.dest for a in sub._actions}
    defaults = {}
    for key, val in _read_config_file(known.config).items():
        dest = key.replace("-", "_")
        if dest not in valid:
            raise ConfigError(f"unknown config key {key!r} for command {command!r}")
        defaults[dest] = val
    sub.set_defaults(**defaults)


def _as_bool(val) -> bool:
    if isinstance(val, bool):
        return val
    return str(val).lower() in ("1", "true", "yes", "on")


def _require_dir(path: str, role: str) -> None:
    if not os.path.isdir(path):
        raise ConfigError(f"{role} directory {path!r} does not exist")


def _planted_pairs(raw: str | None, n_pairs, cooccur, num_codes: int):
    """Either an explicit 'a:b:p,...' list or the first n disjoint pairs
    (0,1), (2,3), ... at a shared co-occurrence probability."""
    if raw:
        pairs = []
        for part in raw.split(","):
            bits = part.split(":")
            if len(bits) != 3:
                raise ConfigError(f"bad planted pair {part!r}, expected a:b:p")
            pairs.append((int(bits[0]), int(bits[1]), float(bits[2])))
        return tuple(pairs)
    n_pairs = int(n_pairs)
    if 2 * n_pairs > num_codes:
        raise ConfigError(f"{n_pairs} disjoint pairs need {2 * n_pairs} codes, have {num_codes}")
    return tuple((2 * i, 2 * i + 1, float(cooccur)) for i in range(n_pairs))


def cmd_gen_data(args) -> int:
    _require_dir(args.out, "output")
    pairs = _planted_pairs(args.planted, args.planted_pairs, args.cooccur, int(args.codes))
    # the conventional top-K is 50; clamp the default when the synthetic
    # dictionary is smaller, but honor an explicit request verbatim
    top_k = min(50, int(args.codes)) if args.top_k is None else int(args.top_k)
    cfg = CorpusConfig(
        num_docs=int(args.docs), vocab_size=int(args.vocab), num_codes=int(args.codes),
        top_k=top_k, planted_pairs=pairs,
        doc_len=(int(args.doc_len_min), int(args.doc_len_max)), seed=int(args.seed),
        code_skew=float(args.code_skew), extra_code_prob=float(args.extra_code_prob),
        signal_strength=float(args.signal_strength))
    documents, codes, tokens = generate_synthetic_corpus(cfg)
    documents = filter_top_k(documents, cfg.top_k)
    splits = split_indices(len(documents), cfg.seed)
    train_docs = [documents[i] for i in splits["train"]]
    table = build_complication_table(train_docs, float(args.or_threshold), int(args.min_support))
    bundle = CorpusBundle(documents, codes, tokens, table, splits)
    corpus_io.write_corpus_dir(args.out, bundle)
    print(f"wrote {len(documents)} documents, {len(table)} complication pairs -> {args.out}")
    return 0


def cmd_build_table(args) -> int:
    _require_dir(args.corpus, "corpus")
    bundle = load_corpus_dir(args.corpus)
    table = build_complication_table(bundle.split_docs("train"),
                                     float(args.or_threshold), int(args.min_support))
    out = args.out or os.path.join(args.corpus, corpus_io.TABLE_FILE)
    write_table(out, table)
    print(f"wrote {len(table)} complication pairs -> {out}")
    return 0


def cmd_train(args) -> int:
    _require_dir(args.corpus, "corpus")
    _require_dir(args.out, "output")
    bundle = load_corpus_dir(args.corpus)
    cfg = TrainConfig(
        epochs=int(args.epochs), pretrain_epochs=int(args.pretrain_epochs),
        batch_size=int(args.batch_size), learning_rate=float(args.lr),
        max_len=int(args.max_len), seed=int(args.seed),
        no_copy=_as_bool(args.no_copy), no_arl=_as_bool(args.no_arl),
        supervised_weight=float(args.supervised_weight), clip_norm=float(args.clip_norm),
        candidate_activation=args.candidate_activation, dropout=float(args.dropout),
        d_embed=int(args.d_embed), d_code=int(args.d_code), n_filters=int(args.n_filters))
    report, model = train(bundle, cfg)
    ckpt = os.path.join(args.out, CHECKPOINT_NAME)
    save_model(ckpt, model, cfg.seed)
    report.checkpoint_path = ckpt
    with open(os.path.join(args.out, REPORT_NAME), "w") as fh:
        json.dump(report.as_dict(), fh, indent=2)
        fh.write("\n")
    print(f"trained (ablation={report.ablation}) best epoch {report.best_epoch} "
          f"val jaccard {report.best_jaccard:.4f} -> {ckpt}")
    return 0


def _compat_check(kv: dict[str, str], bundle: CorpusBundle) -> None:
    if int(kv["vocab_size"]) != bundle.tokens.vocab_size:
        raise CompatibilityError(
            f"checkpoint vocabulary {kv['vocab_size']} != corpus {bundle.tokens.vocab_size}")
    if int(kv["num_codes"]) != bundle.codes.num_real:
        raise CompatibilityError(
            f"checkpoint code count {kv['num_codes']} != corpus {bundle.codes.num_real}")


def cmd_eval(args) -> int:
    _require_dir(args.corpus, "corpus")
    _require_dir(args.out, "output")
    bundle = load_corpus_dir(args.corpus)
    if args.from_predictions:
        records = read_predictions(args.from_predictions)
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --from-predictions")
        kv, slots = load_checkpoint(args.checkpoint)
        _compat_check(kv, bundle)
        model = model_from_checkpoint(kv, slots)
        docs = bundle.split_docs(args.split)
        records = decode_predictions(model, docs, bundle.table)
        write_predictions(os.path.join(args.out, PREDICTIONS_NAME), records)
    values = metric_table(records, bundle.table, range(bundle.codes.num_real))
    text = format_metric_table(values)
    with open(os.path.join(args.out, METRICS_NAME), "w") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_report(args) -> int:
    _require_dir(args.corpus, "corpus")
    bundle = load_corpus_dir(args.corpus)
    records = read_predictions(args.predictions)
    text = format_metric_table(metric_table(records, bundle.table,
                                            range(bundle.codes.num_real)))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="ehrpath",
                                     description="Path-decoding multi-label code predictor")
    sub = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("gen-data", help="synthesize a corpus directory")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", default=2000)
    p.add_argument("--vocab", default=400)
    p.add_argument("--codes", default=20)
    p.add_argument("--top-k", help="default: min(50, codes)")
    p.add_argument("--seed", default=0)
    p.add_argument("--doc-len-min", default=20)
    p.add_argument("--doc-len-max", default=60)
    p.add_argument("--planted", help="explicit pairs a:b:p,a:b:p,...")
    p.add_argument("--planted-pairs", default=5, help="number of disjoint auto pairs")
    p.add_argument("--cooccur", default=0.9)
    p.add_argument("--or-threshold", default=2.0)
    p.add_argument("--min-support", default=5)
    p.add_argument("--code-skew", default=1.0)
    p.add_argument("--extra-code-prob", default=0.25)
    p.add_argument("--signal-strength", default=0.8)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-table", help="rebuild the complication table from the train split")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--or-threshold", default=2.0)
    p.add_argument("--min-support", default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_table)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", default=200)
    p.add_argument("--pretrain-epochs", default=10)
    p.add_argument("--batch-size", default=32)
    p.add_argument("--lr", default=1e-4)
    p.add_argument("--max-len", default=8)
    p.add_argument("--seed", default=0)
    p.add_argument("--no-copy", action="store_true")
    p.add_argument("--no-arl", action="store_true")
    p.add_argument("--supervised-weight", default=1.0)
    p.add_argument("--clip-norm", default=5.0)
    p.add_argument("--candidate-activation", default="relu", choices=("relu", "tanh"))
    p.add_argument("--dropout", default=0.5)
    p.add_argument("--d-embed", default=100)
    p.add_argument("--d-code", default=100)
    p.add_argument("--n-filters", default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="decode a split and write predictions plus metrics")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--from-predictions", help="score an existing prediction file instead")
    p.add_argument("--split", default="test", choices=("train", "test", "validation"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="metric table for a prediction file")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    for name, action in sub.choices.items():
        registry[name] = action
    return parser, registry


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        _apply_config_file(subparsers, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except CompatibilityError as exc:
        print(f"compatibility error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:  # malformed flag values and the like
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
