"""Command-line entry point: ``qars <command> ...``.

stdout carries only results; diagnostics go to stderr. Exit codes: 0 success,
1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import tensor as T
from .data import (LAYOUT_COLUMNS, QERecord, dataset_stats, load_dataset, merge_backtranslation,
                   parse_score, read_inputs, read_numbers, split_dev, write_dataset)
from .encoder import load_precomputed
from .errors import DataError, QarsError
from .estimator import EstimatorMode, build_estimator, load_estimator, predict_many, to_likert
from .evaluation import pearson, report
from .lexical import bleu, chrf
from .semantic import bertscore
from .text import BOS, EOS, encode_ids, tokenize_ws
from .trainer import TrainConfig, train

log = logging.getLogger("qars")

DEFAULT_LAYOUT = {"reference": "nonblind", "reference-free": "reference-free", "cross": "reference-free"}


def _lines(path: str) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _write_lines(path: str | Path, lines) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("QARS_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise DataError(f"QARS_THREADS must be an integer, got {env!r}") from None


def _parallel_map(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- score ---------------------------------------------------------------------

def _bertscore_embeddings(args, hyps: list[str], refs: list[str]):
    if args.hyp_emb and args.ref_emb:
        h = load_precomputed(args.hyp_emb)
        r = load_precomputed(args.ref_emb)
        if len(h) != len(hyps) or len(r) != len(refs):
            raise DataError(f"embedding files hold {len(h)}/{len(r)} segments, text files {len(hyps)}/{len(refs)}")
        return [x.tokens.data for x in h], [x.tokens.data for x in r]
    if not args.model:
        raise DataError("bertscore needs --hyp-emb/--ref-emb or --model")
    model = load_estimator(args.model)
    if model.encoder is None or model.vocab is None:
        raise DataError(f"{args.model}: model has no encoder/vocabulary to embed text with")

    def embed(texts):
        out = []
        with T.no_grad():
            for t in texts:
                ids = [BOS] + encode_ids(tokenize_ws(t), model.vocab) + [EOS]
                tokens, _ = model.encoder.forward([ids])
                out.append(tokens.data[1:-1] if len(ids) > 2 else tokens.data)
        return out

    return embed(hyps), embed(refs)


def cmd_score(args) -> int:
    hyps, refs = _lines(args.hyp), _lines(args.ref)
    if len(hyps) != len(refs):
        raise DataError(f"{args.hyp} has {len(hyps)} lines but {args.ref} has {len(refs)}")
    threads = _threads(args)
    per_segment: list[str] = []
    if args.metric == "bleu":
        h_toks = [tokenize_ws(h) for h in hyps]
        r_toks = [tokenize_ws(r) for r in refs]
        value = bleu(h_toks, r_toks).value
        if args.per_segment:
            scores = _parallel_map(lambda p: bleu([p[0]], [p[1]]).value, list(zip(h_toks, r_toks)), threads)
            per_segment = [f"{i}\t{s:.4f}" for i, s in enumerate(scores, 1)]
    elif args.metric == "chrf":
        scores = _parallel_map(lambda p: chrf(p[0], p[1]).value, list(zip(hyps, refs)), threads)
        value = sum(scores) / len(scores) if scores else 0.0
        per_segment = [f"{i}\t{s:.4f}" for i, s in enumerate(scores, 1)]
    else:
        h_emb, r_emb = _bertscore_embeddings(args, hyps, refs)
        results = _parallel_map(lambda p: bertscore(p[0], p[1]), list(zip(h_emb, r_emb)), threads)
        vals = [getattr(r, args.bertscore_field) for r in results]
        value = sum(vals) / len(vals) if vals else 0.0
        per_segment = [f"{i}\t{r.precision:.4f}\t{r.recall:.4f}\t{r.f1:.4f}" for i, r in enumerate(results, 1)]
    print(f"{value:.4f}")
    if args.per_segment:
        _write_lines(args.per_segment, per_segment)
    return 0


# -- train / predict --------------------------------------------------------------

def cmd_train(args) -> int:
    config = TrainConfig.load(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    layout = args.layout or DEFAULT_LAYOUT[args.mode]
    train_set = load_dataset(args.train_in, args.train_expected, layout)
    dev_set = load_dataset(args.dev_in, args.dev_expected, layout)
    model = build_estimator(args.mode, train_set, hidden=config.hidden_units, dropout=config.dropout,
                            seed=config.seed, dim=args.dim, layers=args.layers, heads=args.heads,
                            max_seq_len=args.max_seq_len, positional=args.positional)
    report_, _ = train(model, config, train_set, dev_set, out_dir=args.out)
    log.info("best epoch %d (dev pearson %.4f); model written to %s", report_.best_epoch,
             report_.dev_pearson[report_.best_epoch - 1], args.out)
    return 0


def cmd_predict(args) -> int:
    model = load_estimator(args.model)
    layout = args.layout or DEFAULT_LAYOUT[model.mode.value]
    rows = read_inputs(args.in_path, layout)
    # scores are irrelevant for prediction; a placeholder keeps QERecord validation happy
    records = [QERecord(score=1.0, **row) for row in rows]
    preds = predict_many(model, records)
    for y in preds:
        print(repr(to_likert(float(y), clamp=args.clamp)))
    return 0


# -- evaluate / stats / split / merge ---------------------------------------------

def cmd_evaluate(args) -> int:
    gold = read_numbers(args.gold)
    if len(args.pred) == 1 and not args.tsv:
        preds = read_numbers(args.pred[0])
        if len(preds) != len(gold):
            raise DataError(f"{args.pred[0]} has {len(preds)} lines but {args.gold} has {len(gold)}")
        print(f"{100 * pearson(preds, gold):.2f}")
        return 0
    results = []
    for spec in args.pred:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        preds = read_numbers(path)
        if len(preds) != len(gold):
            raise DataError(f"{path} has {len(preds)} lines but {args.gold} has {len(gold)}")
        results.append((name, preds, gold))
    rep = report(results)
    print(rep.render())
    if args.tsv:
        Path(args.tsv).write_text(rep.to_tsv(), encoding="utf-8")
    return 0


def cmd_stats(args) -> int:
    print(dataset_stats(load_dataset(args.in_path, args.expected, args.layout)).format())
    return 0


def cmd_split(args) -> int:
    ins, exps = _lines(args.in_path), _lines(args.expected)
    if len(ins) != len(exps):
        raise DataError(f"{args.in_path} has {len(ins)} lines but {args.expected} has {len(exps)}")
    for i, line in enumerate(exps, 1):
        parse_score(line.strip(), f"{args.expected}:{i}")
    train, dev = split_dev(list(zip(ins, exps)), args.seed, args.dev_size)
    prefix = args.out_prefix
    for part, rows in (("train", train), ("dev", dev)):
        _write_lines(f"{prefix}.{part}.in.tsv", [r[0] for r in rows])
        _write_lines(f"{prefix}.{part}.expected.tsv", [r[1] for r in rows])
    log.info("train %d, dev %d", len(train), len(dev))
    return 0


def cmd_merge_bt(args) -> int:
    blind = load_dataset(args.blind_in, args.blind_expected, "blind")
    nonblind = load_dataset(args.nonblind_in, args.nonblind_expected, "nonblind")
    merged = merge_backtranslation(blind, args.bt_src, nonblind)
    write_dataset(merged, f"{args.out_prefix}.in.tsv", f"{args.out_prefix}.expected.tsv", "reference-free")
    log.info("merged %d nonblind + %d blind = %d records", len(nonblind), len(blind), len(merged))
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qars", description="MT quality assessment toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="lexical or embedding metric between hypothesis and reference files")
    p.add_argument("--metric", choices=["bleu", "chrf", "bertscore"], required=True)
    p.add_argument("--hyp", required=True, help="hypotheses, one per line")
    p.add_argument("--ref", required=True, help="references, one per line")
    p.add_argument("--hyp-emb", help="QEEMB token embeddings of the hypotheses (bertscore)")
    p.add_argument("--ref-emb", help="QEEMB token embeddings of the references (bertscore)")
    p.add_argument("--model", help="trained model directory used to embed text (bertscore)")
    p.add_argument("--bertscore-field", choices=["precision", "recall", "f1"], default="f1")
    p.add_argument("--per-segment", metavar="FILE", help="also write per-segment scores as TSV")
    p.add_argument("--threads", type=int, help="worker threads (default: $QARS_THREADS or 1)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="train a quality estimator")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")
    p.add_argument("--train-in", required=True)
    p.add_argument("--train-expected", required=True)
    p.add_argument("--dev-in", required=True)
    p.add_argument("--dev-expected", required=True)
    p.add_argument("--mode", choices=[m.value for m in EstimatorMode], required=True)
    p.add_argument("--layout", choices=list(LAYOUT_COLUMNS), help="input layout (default follows --mode)")
    p.add_argument("--out", required=True, help="output model directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--max-seq-len", type=int, default=128)
    p.add_argument("--positional", choices=["sinusoidal", "learned"], default="sinusoidal")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score segments with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--layout", choices=list(LAYOUT_COLUMNS), help="input layout (default follows the model mode)")
    p.add_argument("--clamp", action="store_true", help="clamp predictions to the 1-5 range")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="Pearson r x100 of predictions against gold scores")
    p.add_argument("--pred", action="append", required=True,
                   help="prediction file; repeat as NAME=FILE to print a comparison table")
    p.add_argument("--gold", required=True)
    p.add_argument("--tsv", help="write the report as NAME<TAB>r_times_100 lines")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--expected", required=True)
    p.add_argument("--layout", choices=list(LAYOUT_COLUMNS), required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("split", help="seeded train/dev split")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--expected", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dev-size", type=int, default=100)
    p.add_argument("--out-prefix", default="split",
                   help="writes PREFIX.{train,dev}.{in,expected}.tsv")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("merge-bt", help="merge back-translated blind data with nonblind data")
    p.add_argument("--blind-in", required=True)
    p.add_argument("--blind-expected", required=True)
    p.add_argument("--bt-src", required=True, help="back-translated sources, aligned with --blind-in")
    p.add_argument("--nonblind-in", required=True)
    p.add_argument("--nonblind-expected", required=True)
    p.add_argument("--out-prefix", required=True, help="writes PREFIX.in.tsv and PREFIX.expected.tsv")
    p.set_defaults(func=cmd_merge_bt)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (QarsError, OSError, ValueError) as e:
        print(f"qars {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
