"""Command-line surface.

Subcommands: build-vocab, tfidf, pretrain, selftrain, finetune, predict, eval.
Every command reads one flat config file (``--config``), with ``--seed``,
``--workers``, ``--out-dir`` and repeatable ``--set key=value`` flags winning
over file values. Outputs land in the configured output directory and are
written atomically (temp file + rename). Exit codes: 0 success, 1 usage or
config error, 2 data integrity error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import corpus as corpus_mod
from . import tfidf as tfidf_mod
from .clustering import ScheduleConfig
from .config import RunConfig, build_config, parse_config_file, require_paths
from .encoder import (embed_corpus, init_params, load_checkpoint,
                      save_checkpoint)
from .errors import ConfigError, DataError, NumericError
from .numkit import RngStreams
from .pipeline import (CorpusBundle, TrainConfig, build_pseudo_pairs, finetune,
                       prepare_bundle, run_stage1, run_stage2)
from .plots import render_metrics_chart, render_training_curves
from .retrieval_eval import (RECALL_KS, LabelIndex, RankedPrediction,
                             batch_topk, metrics_from_predictions,
                             read_predictions, write_predictions)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems map to exit code 1
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _atomic_write_text(path, text: str) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _write_jsonl(path, entries: list[dict]) -> None:
    _atomic_write_text(path, "".join(json.dumps(e) + "\n" for e in entries))


def _out(config: RunConfig, name: str) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    return os.path.join(config.out_dir, name)


def _vocab_path(config: RunConfig) -> str:
    return config.vocab or os.path.join(config.out_dir, "vocab.txt")


def _checkpoint_for_read(config: RunConfig, *candidates: str) -> str:
    if config.checkpoint:
        return config.checkpoint
    for name in candidates:
        path = os.path.join(config.out_dir, name)
        if os.path.exists(path):
            return path
    raise ConfigError(
        f"no checkpoint found: set 'checkpoint' or produce {candidates[0]} first"
    )


def _train_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        schedule=ScheduleConfig(
            K_0=config.K_0, T_K=config.T_K,
            T_update=config.T_update, T_total=config.T_total,
        ),
        N=config.N, M=config.M,
        base_lr=config.base_lr, warmup_ratio=config.warmup_ratio,
        seed=config.seed, k_pseudo=config.k_pseudo,
        finetune_lr=config.finetune_lr, finetune_steps=config.finetune_steps,
        temperature=config.temperature,
        stratified_batching=config.stratified_batching,
        log_every=config.log_every, workers=config.workers,
        kmeans_iters=config.kmeans_iters,
    )


def _load_bundle(config: RunConfig, vocab, with_pairs: bool = False) -> CorpusBundle:
    pairs_path = config.pairs if with_pairs else None
    instances, labels, pairs = corpus_mod.load_corpus(
        config.instances, config.labels, pairs_path)
    ict_pairs, skipped = corpus_mod.make_ict_pairs(
        instances, vocab, config.instance_max_len, config.label_max_len)
    return prepare_bundle(instances, labels, pairs, vocab, ict_pairs, skipped,
                          config.instance_max_len, config.label_max_len)


def _eval_inputs(config: RunConfig, vocab):
    """Instances + truth pairs used by predict/eval: test_* keys when given."""
    inst_path = config.test_instances or config.instances
    pairs_path = config.test_pairs or config.pairs
    if inst_path is None:
        raise ConfigError("predict/eval require 'test_instances' or 'instances'")
    instances = corpus_mod.load_instances(inst_path)
    tokens = [
        vocab.encode(corpus_mod.tokenize(x.text)[:config.instance_max_len])
        for x in instances
    ]
    return instances, tokens, pairs_path


def _load_truth(pairs_path, instances, labels):
    pairs = corpus_mod.load_pairs(
        pairs_path, {x.id for x in instances}, {y.id for y in labels})
    truth: dict[int, set[int]] = {}
    for p in pairs:
        truth.setdefault(p.instance_id, set()).add(p.label_id)
    return truth


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_build_vocab(config: RunConfig) -> None:
    require_paths(config, ["instances", "labels"], "build-vocab")
    instances, labels, _ = corpus_mod.load_corpus(config.instances, config.labels)
    vocab = corpus_mod.build_vocab(instances, labels, config.min_frequency)
    path = _vocab_path(config)
    os.makedirs(config.out_dir, exist_ok=True)
    tmp = path + ".tmp"
    corpus_mod.save_vocab(vocab, tmp)
    os.replace(tmp, path)
    print(f"wrote {path} ({vocab.size} tokens)")


def cmd_tfidf(config: RunConfig) -> None:
    """TF-IDF baseline: retrieval by sparse cosine, plus metrics when truth exists."""
    require_paths(config, ["instances", "labels"], "tfidf")
    train_instances, labels, _ = corpus_mod.load_corpus(config.instances, config.labels)
    eval_path = config.test_instances or config.instances
    eval_instances = corpus_mod.load_instances(eval_path)

    table = tfidf_mod.fit_idf([corpus_mod.tokenize(x.text) for x in train_instances])
    label_vecs = [tfidf_mod.vectorize(corpus_mod.tokenize(y.text), table) for y in labels]
    label_ids = np.array([y.id for y in labels], dtype=np.int64)

    k_max = min(max(RECALL_KS), len(labels))
    predictions = []
    for inst in eval_instances:
        query = tfidf_mod.vectorize(corpus_mod.tokenize(inst.text), table)
        ranked = tfidf_mod.sparse_topk(query, label_vecs, k_max)
        entries = [(int(label_ids[pos]), score) for pos, score in ranked]
        predictions.append(RankedPrediction(instance_id=inst.id, entries=entries, k=k_max))

    pred_path = _out(config, "tfidf_predictions.tsv")
    tmp = pred_path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        write_predictions(predictions, f)
    os.replace(tmp, pred_path)
    print(f"wrote {pred_path}")

    pairs_path = config.test_pairs or config.pairs
    if pairs_path:
        truth = _load_truth(pairs_path, eval_instances, labels)
        report = metrics_from_predictions(predictions, truth, RECALL_KS)
        metrics_path = _out(config, "tfidf_metrics.json")
        _atomic_write_text(metrics_path, report.to_json())
        render_metrics_chart(report, _out(config, "tfidf_metrics.png"))
        print(report.to_json(), end="")


def cmd_pretrain(config: RunConfig) -> None:
    require_paths(config, ["instances", "labels"], "pretrain")
    vocab = corpus_mod.load_vocab(_vocab_path(config))
    bundle = _load_bundle(config, vocab)
    streams = RngStreams(config.seed)
    params = init_params(vocab.size, config.d_e, config.d, config.dropout, streams.init)
    params, log_entries = run_stage1(bundle, params, _train_config(config))
    ckpt = _out(config, "stage1.ckpt")
    save_checkpoint(params, vocab.hash64(), ckpt)
    _write_jsonl(_out(config, "stage1_log.jsonl"), log_entries)
    render_training_curves(log_entries, _out(config, "stage1_curves.png"))
    print(f"wrote {ckpt} ({bundle.ict_skipped} instance(s) skipped by ICT)")


def cmd_selftrain(config: RunConfig) -> None:
    require_paths(config, ["instances", "labels"], "selftrain")
    vocab = corpus_mod.load_vocab(_vocab_path(config))
    bundle = _load_bundle(config, vocab)
    ckpt_in = _checkpoint_for_read(config, "stage1.ckpt")
    params, _ = load_checkpoint(ckpt_in, expect_vocab_hash=vocab.hash64())

    table = tfidf_mod.fit_idf(bundle.instance_token_strs)
    pseudo = build_pseudo_pairs(bundle, params, table, config.k_pseudo, config.workers)
    pseudo_path = _out(config, "pseudo_pairs.tsv")
    _atomic_write_text(pseudo_path, "".join(
        f"{p.instance_id}\t{p.label_id}\t{p.source}\n" for p in pseudo.pairs))

    params, log_entries = run_stage2(bundle, params, pseudo, _train_config(config))
    ckpt = _out(config, "stage2.ckpt")
    save_checkpoint(params, vocab.hash64(), ckpt)
    _write_jsonl(_out(config, "stage2_log.jsonl"), log_entries)
    render_training_curves(log_entries, _out(config, "stage2_curves.png"))
    print(f"wrote {ckpt} ({len(pseudo.pairs)} pseudo pairs)")


def cmd_finetune(config: RunConfig) -> None:
    require_paths(config, ["instances", "labels", "pairs"], "finetune")
    vocab = corpus_mod.load_vocab(_vocab_path(config))
    bundle = _load_bundle(config, vocab, with_pairs=True)
    if not bundle.pairs:
        raise DataError(f"{config.pairs}: no pairs available for fine-tuning")
    ckpt_in = _checkpoint_for_read(config, "stage2.ckpt", "stage1.ckpt")
    params, _ = load_checkpoint(ckpt_in, expect_vocab_hash=vocab.hash64())
    subset = corpus_mod.sample_fewshot(
        bundle.pairs, config.fewshot_mode, config.fewshot_ratio, config.fewshot_seed)
    params, log_entries = finetune(bundle, params, subset, _train_config(config))
    ckpt = _out(config, "finetuned.ckpt")
    save_checkpoint(params, vocab.hash64(), ckpt)
    _write_jsonl(_out(config, "finetune_log.jsonl"), log_entries)
    render_training_curves(log_entries, _out(config, "finetune_curves.png"))
    print(f"wrote {ckpt} ({len(subset.pairs)} few-shot pairs)")


def _encoder_predictions(config: RunConfig, k: int):
    vocab = corpus_mod.load_vocab(_vocab_path(config))
    ckpt = _checkpoint_for_read(config, "stage2.ckpt", "stage1.ckpt")
    params, _ = load_checkpoint(ckpt, expect_vocab_hash=vocab.hash64())
    require_paths(config, ["labels"], "predict/eval")
    labels = corpus_mod.load_labels(config.labels)
    label_tokens = [
        vocab.encode(corpus_mod.tokenize(y.text)[:config.label_max_len]) for y in labels
    ]
    index = LabelIndex(
        embeddings=embed_corpus(params, label_tokens, workers=config.workers),
        label_ids=np.array([y.id for y in labels], dtype=np.int64),
    )
    instances, tokens, pairs_path = _eval_inputs(config, vocab)
    queries = embed_corpus(params, tokens, workers=config.workers)
    k_eff = min(k, len(labels))
    predictions = batch_topk(index, queries, [x.id for x in instances], k_eff)
    return predictions, instances, labels, pairs_path


def cmd_predict(config: RunConfig) -> None:
    predictions, _, _, _ = _encoder_predictions(config, config.predict_k)
    path = _out(config, "predictions.tsv")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        write_predictions(predictions, f)
    os.replace(tmp, path)
    print(f"wrote {path}")


def cmd_eval(config: RunConfig) -> None:
    """Metrics from an encoder checkpoint, or from an existing predictions file."""
    if config.predictions:
        require_paths(config, ["labels"], "eval")
        predictions = read_predictions(config.predictions)
        labels = corpus_mod.load_labels(config.labels)
        inst_path = config.test_instances or config.instances
        if inst_path is None:
            raise ConfigError("eval requires 'test_instances' or 'instances'")
        instances = corpus_mod.load_instances(inst_path)
        pairs_path = config.test_pairs or config.pairs
    else:
        predictions, instances, labels, pairs_path = _encoder_predictions(
            config, max(RECALL_KS))
    if pairs_path is None:
        raise ConfigError("eval requires 'test_pairs' or 'pairs' for ground truth")
    truth = _load_truth(pairs_path, instances, labels)
    report = metrics_from_predictions(predictions, truth, RECALL_KS)
    _atomic_write_text(_out(config, "metrics.json"), report.to_json())
    render_metrics_chart(report, _out(config, "metrics.png"))
    print(report.to_json(), end="")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "tfidf": cmd_tfidf,
    "pretrain": cmd_pretrain,
    "selftrain": cmd_selftrain,
    "finetune": cmd_finetune,
    "predict": cmd_predict,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maclr", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0]
                           if fn.__doc__ else None)
        p.add_argument("--config", required=True, help="path to key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out-dir", default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
    return parser


def _collect_overrides(args) -> dict:
    overrides: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    return overrides


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_values = parse_config_file(args.config)
        config = build_config(file_values, _collect_overrides(args))
        _COMMANDS[args.command](config)
        return 0
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (NumericError, IndexError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
