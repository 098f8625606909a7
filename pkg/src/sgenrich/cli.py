"""Command-line entry point: corpus building, training, enrichment and evaluation."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .autodiff.checkpoint import CheckpointError
from .config import ConfigError, RunConfig, emit_config, load_config, save_config
from .graph import SceneGraphError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("sgenrich")


class UsageError(Exception):
    pass


def _split_fractions(text):
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad split {text!r}") from None
    if len(parts) != 3 or abs(sum(parts) - 1.0) > 1e-9 or min(parts) < 0:
        raise argparse.ArgumentTypeError("split needs three non-negative fractions summing to 1")
    return parts


def _overrides(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


# -- commands ----------------------------------------------------------------------

def cmd_synth_corpus(args):
    from .corpus import TEMPLATE_SETS, corpus_stats, generate_synthetic, split_indices, write_corpus

    if args.template_set not in TEMPLATE_SETS:
        raise UsageError(f"unknown template set {args.template_set!r}; choose from {sorted(TEMPLATE_SETS)}")
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    grammar = TEMPLATE_SETS[args.template_set]()
    vocab = grammar.vocabulary()
    graphs = generate_synthetic(grammar, args.count, args.seed)
    splits = split_indices(len(graphs), args.split, args.seed)
    write_corpus(args.out, vocab, graphs, splits,
                 {"source": "synthetic", "template_set": args.template_set, "seed": args.seed})
    print(json.dumps(corpus_stats(graphs, vocab), indent=1))
    return EXIT_OK


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_ingest_vg(args):
    from .corpus import CorpusConfig, corpus_stats, ingest_vg, write_corpus

    config = CorpusConfig("vg", args.min_obj, args.min_pred, args.split, args.max_nodes, args.seed)
    vocab, graphs, split_names, report = ingest_vg(_read_json(args.objects), _read_json(args.relationships), config)
    splits = {name: [i for i, s in enumerate(split_names) if s == name] for name in ("train", "val", "test")}
    write_corpus(args.out, vocab, graphs, splits, {"source": "vg", "seed": args.seed,
                                                  "min_obj": args.min_obj, "min_pred": args.min_pred,
                                                  "image_ids": report.image_ids})
    stats = corpus_stats(graphs, vocab)
    stats["skipped"] = dict(sorted(report.skipped.items()))
    stats["vocabulary"] = {"objects": len(vocab.real_objects), "predicates": len(vocab.real_predicates)}
    print(json.dumps(stats, indent=1))
    return EXIT_OK


def cmd_train(args):
    from .corpus import corpus_digest, read_corpus
    from .training import Trainer

    overrides = _overrides(args.set)
    if args.steps is not None:
        overrides["train.steps"] = str(args.steps)
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    config = load_config(args.config, overrides) if args.config else _default_with(overrides)
    vocab, graphs, splits = read_corpus(args.corpus)
    train = [graphs[i] for i in splits.get("train", [])]
    val = [graphs[i] for i in splits.get("val", [])]
    if not train:
        raise SceneGraphError("corpus has an empty train split")
    trainer = Trainer(config, vocab, train, val, run_dir=args.out, corpus_digest=corpus_digest(args.corpus))
    latest = os.path.join(args.out, "checkpoints", "latest.ckpt")
    if os.path.exists(latest) and not args.fresh:
        meta = trainer.load(latest)
        saved = dict(meta["config"], steps=config.steps)
        if saved != config.to_dict():
            raise ConfigError("run directory holds a checkpoint made with a different config; use --fresh")
        log.info("resumed from step %d", trainer.step)
    os.makedirs(args.out, exist_ok=True)
    save_config(config, os.path.join(args.out, "config.ini"))

    def report(tr, row, rep):
        log.info("step %d  loss %s", tr.step, row["loss_total"])
        print(json.dumps({"step": tr.step, "loss_total": row["loss_total"],
                          **({"metrics": rep.values} if rep is not None else {})}), flush=True)

    trainer.fit(callback=report)
    print(json.dumps({"step": trainer.step, "stopped_early": trainer.stopped, "best_metric_sum": trainer.best}))
    return EXIT_OK


def _default_with(overrides):
    from .config import parse_config

    return parse_config(emit_config(RunConfig()), overrides)


def cmd_enrich(args):
    from .enricher import EnrichOptions, enrich_iterative
    from .graph import Vocabulary, deserialize, render_sentences, serialize, to_dot
    from .training import load_generator

    try:
        options = EnrichOptions(args.threshold, args.max_edges, args.steps, args.forced_novel, args.temperature,
                                args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model, vocab, _, meta = load_generator(args.model)
    if args.vocabulary:
        with open(args.vocabulary, encoding="utf-8") as fh:
            given = Vocabulary.from_json(fh.read())
        if given.digest() != meta["vocabulary_sha256"]:
            raise CheckpointError("vocabulary file does not match the checkpoint vocabulary")
    with open(args.input, encoding="utf-8") as fh:
        graph = deserialize(fh.read(), vocab)
    steps = enrich_iterative(model, graph, options=options)
    os.makedirs(args.out, exist_ok=True)
    new_nodes = []
    all_sentences = []
    for k, step in enumerate(steps, 1):
        new_nodes.append(step.new_node)
        stem = os.path.join(args.out, f"step_{k:02d}")
        with open(stem + ".json", "w", encoding="utf-8") as fh:
            fh.write(serialize(step.graph, vocab) + "\n")
        with open(stem + ".dot", "w", encoding="utf-8") as fh:
            fh.write(to_dot(step.graph, vocab, highlight=set(new_nodes), name=f"enriched_{k}"))
        sentences = render_sentences(step.graph, vocab)
        with open(stem + ".txt", "w", encoding="utf-8") as fh:
            fh.write("\n".join(sentences) + "\n")
        all_sentences = sentences
        print(json.dumps({"step": k, "object": vocab.object_names[step.obj],
                          "edges": [[s, vocab.predicate_names[p], o] for (s, o, _), p in
                                    zip(step.selected, step.predicates)]}))
    with open(os.path.join(args.out, "sentences.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(all_sentences) + "\n")
    return EXIT_OK


def cmd_eval(args):
    from .corpus import read_corpus
    from .metrics import evaluate
    from .surrogates import Surrogates
    from .training import load_generator, make_examples

    model, vocab, config, meta = load_generator(args.model)
    corpus_vocab, graphs, splits = read_corpus(args.corpus)
    if corpus_vocab.digest() != meta["vocabulary_sha256"]:
        raise CheckpointError("corpus vocabulary does not match the checkpoint vocabulary")
    chosen = [graphs[i] for i in splits.get(args.split, [])]
    examples = make_examples(chosen, vocab, [config.seed, 1]) if chosen else []
    if not examples:
        raise SceneGraphError(f"split {args.split!r} has no graph with two or more nodes")
    surrogates = Surrogates(vocab, config.surrogate_config) if config.loss_weights.needs_images else None
    report = evaluate(model, examples, surrogates, config.threshold, config.max_edges,
                      teacher_forcing=not args.no_teacher_forcing)
    text = report.to_json()
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    print(report.table(), file=sys.stderr)
    return EXIT_OK


def cmd_show_config(args):
    cfg = load_config(args.config, _overrides(args.set)) if args.config else _default_with(_overrides(args.set))
    sys.stdout.write(emit_config(cfg))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="sgenrich", description="Scene-graph enrichment toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", parents=[common], help="generate a synthetic scene-graph corpus")
    p.add_argument("--template-set", default="default")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=_split_fractions, default=(0.8, 0.1, 0.1), help="train,val,test fractions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("ingest-vg", parents=[common], help="filter Visual Genome JSON into a corpus")
    p.add_argument("--objects", required=True)
    p.add_argument("--relationships", required=True)
    p.add_argument("--min-obj", type=int, default=2000)
    p.add_argument("--min-pred", type=int, default=500)
    p.add_argument("--max-nodes", type=int, default=None)
    p.add_argument("--split", type=_split_fractions, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest_vg)

    p = sub.add_parser("train", parents=[common], help="train an enricher; resumes from the run directory's latest checkpoint")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    p.add_argument("--fresh", action="store_true", help="ignore an existing checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enrich", parents=[common], help="iteratively enrich one scene graph")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--vocabulary")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--max-edges", type=int, default=8)
    p.add_argument("--forced-novel", action="store_true")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enrich)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a corpus split")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("val", "test"), default="val")
    p.add_argument("--json")
    p.add_argument("--no-teacher-forcing", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("show-config", parents=[common], help="print the effective run config")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_show_config)
    return parser


def _limit_threads():
    threads = os.environ.get("SG_ENRICH_THREADS")
    if not threads:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(threads))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "split", 0) is None:
        from .corpus import VG_SPLIT_FRACTIONS
        args.split = VG_SPLIT_FRACTIONS
    _limit_threads()
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SceneGraphError, CheckpointError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
