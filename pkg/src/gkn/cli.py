"""Command-line interface: generate | train | eval | gram | predict | match | explain.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import matching, syndata, trainer
from .errors import DataError, NumericError
from .graphdata import Vocabulary, load_graphs, write_graphs
from .kernels import gram_matrix, kernel_rows, save_gram
from .svm import predict as svm_predict
from .svm import top_support_vectors
from .trainer import TrainConfig

log = logging.getLogger("gkn")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gkn", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="emit a synthetic labeled cohort with splits")
    p.add_argument("--input", help="optional JSON cohort config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train on a generated data directory")
    p.add_argument("--input", required=True, help="directory with train.jsonl/val.jsonl/vocab.txt")
    p.add_argument("--vocab", help="vocabulary file overriding the directory's vocab.txt")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--kernel", choices=("cosine", "euclidean"), default="cosine")
    p.add_argument("--layers", type=_positive_int, default=TrainConfig.num_layers)
    p.add_argument("--dim", type=_positive_int, default=TrainConfig.dim)
    p.add_argument("--clusters", type=_positive_int, default=TrainConfig.num_clusters)
    p.add_argument("--margin", type=float, default=TrainConfig.margin)
    p.add_argument("--batch", type=_positive_int, default=TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--svm-c", type=float, default=TrainConfig.svm_c)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    for name, helptext in (("eval", "metrics report for labeled graphs"),
                           ("gram", "export the kernel gram matrix of a graph set"),
                           ("predict", "predict labels for graphs"),
                           ("match", "node matching between one or two graphs"),
                           ("explain", "most similar cases and top support vectors")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--input", required=True, help="graphs in JSONL format")
        p.add_argument("--vocab", help="vocabulary file; must match the checkpoint")
        if name == "match":
            p.add_argument("--out", required=True, help="output directory for the CSV files")
        elif name == "gram":
            p.add_argument("--out", required=True, help="output path (.csv for text, else binary)")
        else:
            p.add_argument("--out", help="output file (stdout summary always printed)")
        if name == "explain":
            p.add_argument("--top-k", type=_positive_int, default=5, dest="top_k")
        p.set_defaults(func=globals()[f"cmd_{name}"])
    return parser


def _load_cohort_config(path, seed) -> syndata.CohortConfig:
    kwargs = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                kwargs = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise DataError(f"cannot read cohort config {path}: {err}") from None
        if "motifs" in kwargs:
            kwargs["motifs"] = {int(k): list(v) for k, v in kwargs["motifs"].items()}
    if seed is not None:
        kwargs["seed"] = seed
    try:
        return syndata.CohortConfig(**kwargs)
    except TypeError as err:
        raise DataError(f"bad cohort config: {err}") from None


def cmd_generate(args) -> int:
    cfg = _load_cohort_config(args.input, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = syndata.vocabulary(cfg)
    streams = syndata.generate_cohort(cfg)
    graphs = syndata.cohort_to_graphs(streams, cfg)
    splits = dict(zip(("train", "val", "test"), syndata.split_cohort(graphs, seed=cfg.seed)))
    write_graphs(out / "cohort.jsonl", graphs, vocab)
    for name, part in splits.items():
        write_graphs(out / f"{name}.jsonl", part, vocab)
    vocab.to_file(out / "vocab.txt")
    stats = syndata.cohort_stats(graphs)
    (out / "stats.txt").write_text(stats, encoding="utf-8")
    print(stats, end="")
    print(f"wrote {len(graphs)} graphs to {out} "
          f"(train/val/test = {'/'.join(str(len(splits[k])) for k in ('train', 'val', 'test'))})")
    return 0


def cmd_train(args) -> int:
    data_dir = Path(args.input)
    vocab_path = Path(args.vocab) if args.vocab else data_dir / "vocab.txt"
    for path in (data_dir / "train.jsonl", data_dir / "val.jsonl", vocab_path):
        if not path.exists():
            raise DataError(f"missing input file: {path}")
    vocab = Vocabulary.from_file(vocab_path)
    train_graphs, _ = load_graphs(data_dir / "train.jsonl", vocab)
    val_graphs, _ = load_graphs(data_dir / "val.jsonl", vocab)
    cfg = TrainConfig(num_layers=args.layers, dim=args.dim, num_clusters=args.clusters,
                      margin=args.margin, batch_size=args.batch, learning_rate=args.lr,
                      epochs=args.epochs, svm_c=args.svm_c, kernel_variant=args.kernel,
                      seed=args.seed)
    ckpt, rows = trainer.train(train_graphs, val_graphs, vocab, cfg)
    trainer.save(ckpt, args.out)
    log_path = Path(args.out).with_suffix(".log.csv")
    trainer.write_training_log(log_path, rows)
    print(f"checkpoint written to {args.out} (best epoch {ckpt.best_epoch}); "
          f"training log at {log_path}")
    return 0


def _load_model_and_graphs(args):
    ckpt = trainer.load(args.checkpoint)
    vocab = Vocabulary(ckpt.vocab_codes)
    if args.vocab:
        supplied = Vocabulary.from_file(args.vocab)
        if supplied.sha256() != ckpt.vocab_sha256:
            raise DataError("supplied vocabulary does not match the checkpoint")
    graphs, _ = load_graphs(args.input, vocab)
    if not graphs:
        raise DataError(f"{args.input}: no graphs")
    return ckpt, vocab, graphs


def cmd_eval(args) -> int:
    ckpt, vocab, graphs = _load_model_and_graphs(args)
    report = trainer.evaluate(ckpt, graphs, vocab)
    summary = {k: report[k] for k in ("accuracy", "auroc", "macro_f1", "n")}
    print(json.dumps(summary, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return 0


def cmd_gram(args) -> int:
    ckpt, vocab, graphs = _load_model_and_graphs(args)
    params = trainer.checkpoint_params(ckpt)
    embeddings = trainer.embed_graphs(graphs, len(vocab), params, ckpt.config)
    gram = gram_matrix(embeddings, ckpt.config.kernel_config())
    save_gram(args.out, gram, ids=[g.graph_id for g in graphs])
    print(f"gram matrix ({gram.shape[0]}x{gram.shape[0]}) written to {args.out}")
    return 0


def cmd_predict(args) -> int:
    ckpt, vocab, graphs = _load_model_and_graphs(args)
    params = trainer.checkpoint_params(ckpt)
    embeddings = trainer.embed_graphs(graphs, len(vocab), params, ckpt.config)
    rows = kernel_rows(embeddings, ckpt.train_embeddings, ckpt.config.kernel_config())
    lines = [("graph_id", "prediction", "decision_value")]
    for g, row in zip(graphs, rows):
        label, value = svm_predict(ckpt.svm, row)
        lines.append((g.graph_id, str(label), f"{value:.10f}"))
    text = "\n".join(",".join(line) for line in lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"predictions for {len(graphs)} graphs written to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_match(args) -> int:
    ckpt, vocab, graphs = _load_model_and_graphs(args)
    if len(graphs) > 2:
        raise DataError("match: input must hold one graph (self-match) or two graphs")
    pair = (graphs[0], graphs[-1])
    params = trainer.checkpoint_params(ckpt)
    sides = [trainer.forward_graph(g, len(vocab), params, ckpt.config) for g in pair]
    matrix = matching.match_matrix(sides[0]["assignment"], sides[1]["assignment"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "match_matrix.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + [f"b{j}:{vocab.code(c)}" for j, c in enumerate(pair[1].nodes)])
        for i, row in enumerate(matrix):
            writer.writerow([f"a{i}:{vocab.code(pair[0].nodes[i])}"]
                            + [f"{v:.10f}" for v in row])

    with open(out / "match_nodes.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["graph", "node", "code", "hard_cluster", "alpha"])
        for side, g, fwd in zip("ab", pair, sides):
            hard = matching.hard_clusters(fwd["assignment"])
            for i, code in enumerate(g.nodes):
                writer.writerow([side, i, vocab.code(code), int(hard[i]),
                                 f"{fwd['alpha'][i]:.10f}"])

    print(f"match outputs written to {out}")
    if matrix.shape[0] == matrix.shape[1]:
        rate = matching.diagonal_match_rate(matrix)
        print(f"diagonal-argmax rate: {rate:.4f}")
    return 0


def cmd_explain(args) -> int:
    ckpt, vocab, graphs = _load_model_and_graphs(args)
    params = trainer.checkpoint_params(ckpt)
    embeddings = trainer.embed_graphs(graphs, len(vocab), params, ckpt.config)
    rows = kernel_rows(embeddings, ckpt.train_embeddings, ckpt.config.kernel_config())
    k = min(args.top_k, len(ckpt.train_ids))

    label_of = dict(zip(ckpt.train_ids, (int(v) for v in ckpt.train_labels)))
    supports = [
        {"graph_id": ckpt.train_ids[idx], "label": label_of[ckpt.train_ids[idx]],
         "dual_coef": coef}
        for idx, coef in top_support_vectors(ckpt.svm, k)
    ]
    queries = []
    for g, row in zip(graphs, rows):
        order = sorted(range(len(row)), key=lambda i: (-row[i], ckpt.train_ids[i]))[:k]
        queries.append({
            "graph_id": g.graph_id,
            "most_similar": [
                {"graph_id": ckpt.train_ids[i], "label": label_of[ckpt.train_ids[i]],
                 "kernel": float(row[i])}
                for i in order
            ],
        })
    report = {"top_support_vectors": supports, "queries": queries}
    print(json.dumps({"top_support_vectors": supports[:3],
                      "queries": [q["graph_id"] for q in queries]}, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
