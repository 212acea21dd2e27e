"""Command-line entry point.

Output directory layout (``build-dataset`` / ``train`` / ``eval``)::

    <dir>/vocab/vocab.txt
    <dir>/instances/{all,train,test}.jsonl
    <dir>/checkpoints/model.ckpt
    <dir>/reports/{history.jsonl,eval.json}
    <dir>/config.<command>.json

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import annotation, dataset, extract, metrics, preprocess, synth, tagger

log = logging.getLogger("numtag")

SEED_ENV = "NUMTAG_SEED"

DATA_ERRORS = (
    annotation.AnnotationError,
    preprocess.UnparseableNumeral,
    dataset.EmptyCorpus,
    dataset.NotANumeral,
    dataset.OversizeInstance,
    dataset.TooFewInstances,
    tagger.ConfigMismatch,
    tagger.CorruptCheckpoint,
    tagger.EmptySplit,
    metrics.EmptyEvalSet,
    json.JSONDecodeError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    try:
        return int(os.environ.get(SEED_ENV, "0"))
    except ValueError:
        return 0


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _echo_config(out_dir: Path, args) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"config.{args.command}.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def cmd_preprocess(args) -> int:
    abstracts = preprocess.load_abstracts(_existing(args.input, "input"))
    n = preprocess.write_sentence_files(abstracts, args.out, keep_all=args.keep_all)
    _echo_config(Path(args.out), args)
    log.info("wrote %d sentences from %d abstracts", n, len(abstracts))
    return 0


def cmd_synth(args) -> int:
    corpus = synth.generate_corpus(args.n, seed=args.seed, nested_fraction=args.nested_fraction)
    paths = synth.write_corpus(corpus, args.out, per_file=args.per_file)
    _echo_config(Path(args.out), args)
    log.info("wrote %d sentences into %d file pairs", len(corpus), len(paths))
    return 0


def cmd_build_dataset(args) -> int:
    docs = annotation.read_brat_dir(_existing(args.corpus, "corpus directory"))
    for doc in docs:
        problems = annotation.validate_doc(doc)
        if problems:
            raise annotation.AnnotationError(f"{doc.doc_id}: {problems[0].rule} {problems[0].ref}: {problems[0].message}")
    instances = dataset.build_instances(docs, margin=args.margin, max_len=args.max_len)
    split = dataset.split_dataset(instances, ratio=args.ratio, seed=args.seed)
    if args.vocab_from == "train":
        train_ids = {inst.meta["doc_id"] for inst in split.train}
        vocab = dataset.build_vocab([d for d in docs if d.doc_id in train_ids])
    else:
        vocab = dataset.build_vocab(docs)
    dataset.encode_instances(instances, vocab)

    out = Path(args.out)
    (out / "vocab").mkdir(parents=True, exist_ok=True)
    (out / "instances").mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab" / "vocab.txt")
    dataset.save_instances(instances, out / "instances" / "all.jsonl")
    dataset.save_instances(split.train, out / "instances" / "train.jsonl")
    dataset.save_instances(split.test, out / "instances" / "test.jsonl")
    _echo_config(out, args)
    log.info("%d docs -> %d instances (%d train / %d test), vocab %d",
             len(docs), len(instances), len(split.train), len(split.test), len(vocab))
    return 0


def _load_data_dir(data: Path):
    vocab_path = data / "vocab" / "vocab.txt"
    if not vocab_path.exists():
        raise UsageError(f"no vocabulary in {data}; run build-dataset first")
    return dataset.Vocabulary.load(vocab_path)


def cmd_train(args) -> int:
    data = _existing(args.data, "dataset directory")
    vocab = _load_data_dir(data)
    train_path = _existing(str(data / "instances" / "train.jsonl"), "training instances")
    train = dataset.load_instances(train_path)
    test_path = data / "instances" / "test.jsonl"
    test = dataset.load_instances(test_path) if test_path.exists() else []
    split = dataset.DatasetSplit(train, test, args.seed)
    seq_len = len(train[0].indices) if train else dataset.DEFAULT_MAX_LEN
    config = tagger.ModelConfig(
        vocab_size=len(vocab),
        seq_len=seq_len,
        embed_dim=args.embed,
        hidden_dim=args.hidden,
        dropout=args.dropout,
        dtype=args.precision,
        mask_padding=args.mask_padding,
    )
    model = tagger.init_model(config, seed=args.seed, vocab_hash=vocab.content_hash())
    out = Path(args.out or args.data)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    with (out / "reports" / "history.jsonl").open("w") as hist:
        def record(rec):
            hist.write(json.dumps(rec, sort_keys=True) + "\n")
            log.info("epoch %d train_loss=%.5f train_dice=%.4f", rec["epoch"], rec["train_loss"], rec["train_dice"])

        tagger.train(model, split, epochs=args.epochs, batch_size=args.batch, seed=args.seed, lr=args.lr,
                     val_fraction=args.val_fraction, log=record)
    tagger.save_checkpoint(model, out / "checkpoints" / "model.ckpt")
    _echo_config(out, args)
    return 0


def cmd_eval(args) -> int:
    data = _existing(args.data, "dataset directory")
    vocab = _load_data_dir(data)
    model = tagger.load_checkpoint(_existing(args.checkpoint, "checkpoint"), vocab_hash=vocab.content_hash())
    instances = dataset.load_instances(_existing(str(data / "instances" / f"{args.split}.jsonl"), "instances"))
    report = metrics.evaluate(model, instances, pooled=args.pooled)
    out = Path(args.out) if args.out else data / "reports" / "eval.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    _echo_config(out.parent, args)
    print(report.summary())
    return 0


def cmd_extract(args) -> int:
    vocab = dataset.Vocabulary.load(_existing(args.vocab, "vocabulary"))
    model = tagger.load_checkpoint(_existing(args.checkpoint, "checkpoint"), vocab_hash=vocab.content_hash())
    src = _existing(args.input, "input text")
    mask = {"oov": dataset.OOV, "num": dataset.NUM}[args.mask_token]
    records = []
    for i, raw in enumerate(preprocess.segment_sentences(src.read_text(encoding="utf-8"))):
        sent = preprocess.prepare_sentence(raw)
        doc_id = f"{src.stem}:{i}"
        if args.hierarchical:
            records += extract.extract_hierarchical(model, vocab, sent, doc_id, max_depth=args.max_depth, mask_token=mask)
        else:
            records += extract.extract_sentence(model, vocab, sent, doc_id)
    text = extract.to_jsonl(records)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _echo_config(Path(args.out).parent, args)
    else:
        sys.stdout.write(text)
    if args.csv:
        Path(args.csv).write_text(extract.to_csv(records), encoding="utf-8")
    return 0


def cmd_stats(args) -> int:
    docs = annotation.read_brat_dir(_existing(args.corpus, "corpus directory"))
    print(json.dumps(synth.corpus_stats(docs), indent=2, sort_keys=True))
    return 0


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=_default_seed(), help=f"random seed (default ${SEED_ENV} or 0)")
    common.add_argument("--threads", type=int, default=1, help="cap on BLAS threads")
    common.add_argument("--config", help="JSON file of option values; flags override it")

    parser = _Parser(prog="numtag", description="Extract numeral, unit and metric records from scientific text.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("preprocess", parents=[common], help="abstracts -> one-sentence-per-line files")
    p.add_argument("--input", required=True, help="directory of .txt abstracts or JSONL {source_id, body}")
    p.add_argument("--out", required=True)
    p.add_argument("--keep-all", action="store_true", help="keep sentences without numerals")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic annotated corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--per-file", type=int, default=100)
    p.add_argument("--nested-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-dataset", parents=[common], help=".txt/.ann -> vocab + instances + split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=float, default=0.9)
    p.add_argument("--margin", type=int, default=dataset.DEFAULT_MARGIN)
    p.add_argument("--max-len", type=int, default=dataset.DEFAULT_MAX_LEN)
    p.add_argument("--vocab-from", choices=["all", "train"], default="all")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", parents=[common], help="train the tagger")
    p.add_argument("--data", required=True, help="directory written by build-dataset")
    p.add_argument("--out", help="output directory (default: --data)")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--embed", type=int, default=128)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--precision", choices=["float64", "float32"], default="float64")
    p.add_argument("--val-fraction", type=float, default=0.0)
    p.add_argument("--mask-padding", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--out", help="report path (default: <data>/reports/eval.json)")
    p.add_argument("--pooled", action="store_true", help="pool dice sums over all instances")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract", parents=[common], help="raw text -> JSONL records")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--csv")
    p.add_argument("--hierarchical", action="store_true")
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--mask-token", choices=["oov", "num"], default="oov")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("stats", parents=[common], help="corpus statistics")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required")
    if getattr(args, "config", None):
        cfg = json.loads(_existing(args.config, "config file").read_text())
        sub = parser._subparsers._group_actions[0].choices[args.command]
        unknown = set(cfg) - {a.dest for a in sub._actions}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def run(argv=None) -> int:
    try:
        args = _parse(argv)
    except UsageError as exc:
        print(f"numtag: usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"numtag: usage error: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"numtag: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
