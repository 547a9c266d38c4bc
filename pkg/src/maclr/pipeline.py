"""Two-stage training orchestration plus few-shot fine-tuning.

Stage I pre-trains the encoder on ICT (context, title) pairs with the
cluster-supervised contrastive loss plus label regularization, under the
coarse-to-fine cluster schedule. Stage II mines pseudo (instance, label)
pairs from the Stage-I encoder and from TF-IDF, then continues training on
the mixed pair set with in-batch positives grouped by instance id. Each
stage owns a fresh Adam state; that choice is recorded in the training log.

Training logs are lists of JSON-serializable dicts with at least step, loss,
loss_cluster, loss_label, K, lr and elapsed seconds per logged step.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import tfidf
from .clustering import (SINGLETON, ScheduleConfig, kmeans, positives_by_key,
                         positives_in_batch, schedule_K)
from .corpus import FewShotSubset, tokenize
from .encoder import (EncoderParams, GradBuffers, embed_corpus, encode_batch,
                      encode_backward_batch)
from .losses import loss_cluster, loss_contrastive, loss_label, loss_stage1
from .numkit import (AdamState, LrSchedule, RngStreams, adam_state_like,
                     adam_step, lr_at)
from .retrieval_eval import LabelIndex, batch_topk

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    schedule: ScheduleConfig
    N: int = 32
    M: int = 32
    base_lr: float = 1e-5
    warmup_ratio: float = 0.1
    seed: int = 0
    k_pseudo: int = 3
    finetune_lr: float = 5e-6
    finetune_steps: int = 2000
    temperature: float = 1.0
    stratified_batching: bool = False
    log_every: int = 1
    workers: int = 1
    kmeans_iters: int = 50

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"batch size N must be >= 2, got {self.N}")
        if self.M < 1:
            raise ValueError(f"label batch size M must be >= 1, got {self.M}")
        if self.k_pseudo < 1:
            raise ValueError(f"k_pseudo must be >= 1, got {self.k_pseudo}")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")


@dataclass(frozen=True)
class PseudoPair:
    instance_id: int
    label_id: int
    source: str  # "encoder" | "tfidf"


@dataclass
class PseudoPairSet:
    pairs: list[PseudoPair]
    k_pseudo: int


@dataclass
class CorpusBundle:
    """Loaded corpus plus every tokenized view the pipeline needs."""

    instances: list
    labels: list
    pairs: list
    vocab: object
    instance_tokens: list[list[int]]       # truncated, vocab-encoded full text
    label_tokens: list[list[int]]
    instance_token_strs: list[list[str]]   # raw string tokens (for TF-IDF)
    label_token_strs: list[list[str]]
    ict_pairs: list
    ict_skipped: int

    @property
    def instance_ids(self) -> list[int]:
        return [x.id for x in self.instances]

    @property
    def label_ids(self) -> list[int]:
        return [y.id for y in self.labels]


def prepare_bundle(instances, labels, pairs, vocab, ict_pairs, ict_skipped,
                   instance_max_len: int, label_max_len: int) -> CorpusBundle:
    inst_strs = [tokenize(x.text) for x in instances]
    label_strs = [tokenize(y.text) for y in labels]
    return CorpusBundle(
        instances=list(instances),
        labels=list(labels),
        pairs=list(pairs),
        vocab=vocab,
        instance_tokens=[vocab.encode(t[:instance_max_len]) for t in inst_strs],
        label_tokens=[vocab.encode(t[:label_max_len]) for t in label_strs],
        instance_token_strs=inst_strs,
        label_token_strs=label_strs,
        ict_pairs=list(ict_pairs),
        ict_skipped=ict_skipped,
    )


def _l2_normalize(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / np.maximum(norms, 1e-12)


def _adam_states(params: EncoderParams) -> dict[str, AdamState]:
    return {
        "embed_table": adam_state_like(params.embed_table, "embed_table"),
        "proj_weight": adam_state_like(params.proj_weight, "proj_weight"),
        "proj_bias": adam_state_like(params.proj_bias, "proj_bias"),
    }


def _apply(params: EncoderParams, buffers: GradBuffers,
           states: dict[str, AdamState], lr: float) -> None:
    adam_step(params.embed_table, buffers.embed_table, states["embed_table"], lr)
    adam_step(params.proj_weight, buffers.proj_weight, states["proj_weight"], lr)
    adam_step(params.proj_bias, buffers.proj_bias, states["proj_bias"], lr)


def _kmeans_seed(seed: int, event: int) -> int:
    return (seed * 1000003 + event) % (2 ** 63)


def _sample_stage1_batch(streams: RngStreams, n: int, N: int, state,
                         stratified: bool) -> np.ndarray:
    rng = streams.sampling
    if stratified and state is not SINGLETON:
        # half the batch from one random occupied cluster, to raise the
        # incidence of non-trivial positive sets at large K
        anchor = int(rng.integers(n))
        members = np.flatnonzero(state.assignment == state.assignment[anchor])
        take = min(N // 2, len(members))
        half = rng.choice(members, size=take, replace=False)
        others = np.setdiff1d(np.arange(n), half)
        rest = rng.choice(others, size=N - take, replace=False)
        return np.concatenate([half, rest])
    return rng.choice(n, size=N, replace=False)


def run_stage1(bundle: CorpusBundle, params: EncoderParams,
               config: TrainConfig) -> tuple[EncoderParams, list[dict]]:
    """Pre-train on ICT pairs with cluster positives and label regularization."""
    contexts = [list(p.context_ids) for p in bundle.ict_pairs]
    titles = [list(p.title_ids) for p in bundle.ict_pairs]
    n = len(contexts)
    if n < config.N:
        raise ValueError(f"need at least N={config.N} ICT pairs, have {n}")
    n_labels = len(bundle.label_tokens)
    if n_labels < config.M:
        raise ValueError(f"need at least M={config.M} labels, have {n_labels}")

    sched = config.schedule
    lr_sched = LrSchedule(
        base_lr=config.base_lr,
        warmup_steps=int(round(config.warmup_ratio * sched.T_total)),
        total_steps=sched.T_total,
    )
    streams = RngStreams(config.seed)
    states = _adam_states(params)

    event = 0
    cluster_state = kmeans(
        _l2_normalize(embed_corpus(params, contexts, workers=config.workers)),
        min(sched.K_0, n), seed=_kmeans_seed(config.seed, event),
        max_iters=config.kmeans_iters,
    )

    entries: list[dict] = []
    t_start = time.perf_counter()
    for t in range(1, sched.T_total + 1):
        regime = schedule_K(sched, t, n)
        batch = _sample_stage1_batch(streams, n, config.N,
                                     SINGLETON if regime is SINGLETON else cluster_state,
                                     config.stratified_batching)
        label_idx = streams.sampling.choice(n_labels, size=config.M, replace=False)

        X, tr_x = encode_batch(params, [contexts[i] for i in batch], "train", streams.dropout)
        Y, tr_y = encode_batch(params, [titles[i] for i in batch], "train", streams.dropout)
        H_plus, tr_hp = encode_batch(params, [contexts[i] for i in batch], "train", streams.dropout)
        Y_neg, tr_yn = encode_batch(
            params, [bundle.label_tokens[j] for j in label_idx], "train", streams.dropout)

        if regime is SINGLETON:
            positives = positives_in_batch(SINGLETON, batch)
        else:
            positives = positives_in_batch(cluster_state, batch)

        lc, dX_c, dY_c = loss_cluster(X, Y, positives, config.temperature)
        ll, dH, dH_plus, dY_neg = loss_label(X, H_plus, Y_neg, config.temperature)
        total = loss_stage1(lc, ll)

        buffers = GradBuffers.zeros_like(params)
        encode_backward_batch(tr_x, params, dX_c + dH, buffers)
        encode_backward_batch(tr_y, params, dY_c, buffers)
        encode_backward_batch(tr_hp, params, dH_plus, buffers)
        encode_backward_batch(tr_yn, params, dY_neg, buffers)
        lr = lr_at(lr_sched, t)
        _apply(params, buffers, states, lr)

        reclustered = False
        if 2 * t < sched.T_total:
            if t % sched.T_update == 0:
                k_next = schedule_K(sched, t + 1, n)
                if k_next is not SINGLETON:
                    event += 1
                    emb = _l2_normalize(
                        embed_corpus(params, contexts, workers=config.workers))
                    cluster_state = kmeans(
                        emb, k_next, seed=_kmeans_seed(config.seed, event),
                        max_iters=config.kmeans_iters)
                    reclustered = True

        if t % config.log_every == 0 or t == sched.T_total or reclustered:
            entries.append({
                "step": t,
                "loss": total,
                "loss_cluster": lc,
                "loss_label": ll,
                "loss_per_pair": total / config.N,
                "K": "singleton" if regime is SINGLETON else int(regime),
                "lr": lr,
                "recluster": reclustered,
                "elapsed": time.perf_counter() - t_start,
            })
    return params, entries


def build_pseudo_pairs(bundle: CorpusBundle, params: EncoderParams,
                       idf_table: tfidf.IdfTable, k_pseudo: int,
                       workers: int = 1) -> PseudoPairSet:
    """Mine top-k labels per instance from the encoder view and the TF-IDF view.

    The two views are union-merged per instance, deduplicated on
    (instance, label) with the encoder tag winning overlaps, so every
    instance contributes between k_pseudo and 2 * k_pseudo pairs.
    """
    label_ids = np.array(bundle.label_ids, dtype=np.int64)
    index = LabelIndex(
        embeddings=embed_corpus(params, bundle.label_tokens, workers=workers),
        label_ids=label_ids,
    )
    inst_emb = embed_corpus(params, bundle.instance_tokens, workers=workers)
    encoder_preds = batch_topk(index, inst_emb, bundle.instance_ids, k_pseudo)

    label_vecs = [tfidf.vectorize(toks, idf_table) for toks in bundle.label_token_strs]
    pairs: list[PseudoPair] = []
    for pred, inst_toks in zip(encoder_preds, bundle.instance_token_strs):
        iid = pred.instance_id
        seen = set()
        for lid, _ in pred.entries:
            if lid not in seen:
                seen.add(lid)
                pairs.append(PseudoPair(iid, lid, "encoder"))
        query = tfidf.vectorize(inst_toks, idf_table)
        for pos, _ in tfidf.sparse_topk(query, label_vecs, k_pseudo):
            lid = int(label_ids[pos])
            if lid not in seen:
                seen.add(lid)
                pairs.append(PseudoPair(iid, lid, "tfidf"))
    return PseudoPairSet(pairs=pairs, k_pseudo=k_pseudo)


def run_stage2(bundle: CorpusBundle, params: EncoderParams,
               pseudo: PseudoPairSet, config: TrainConfig) -> tuple[EncoderParams, list[dict]]:
    """Self-train on mined pseudo pairs; positives group by instance id."""
    if not pseudo.pairs:
        raise ValueError("pseudo pair set is empty")
    inst_index = {iid: i for i, iid in enumerate(bundle.instance_ids)}
    label_index = {lid: i for i, lid in enumerate(bundle.label_ids)}
    pair_rows = [(inst_index[p.instance_id], label_index[p.label_id], p.instance_id)
                 for p in pseudo.pairs]
    n_p = len(pair_rows)
    replace = n_p < config.N
    if replace:
        log.warning("only %d pseudo pairs for batch size %d; sampling with replacement",
                    n_p, config.N)

    sched = config.schedule
    lr_sched = LrSchedule(
        base_lr=config.base_lr,
        warmup_steps=int(round(config.warmup_ratio * sched.T_total)),
        total_steps=sched.T_total,
    )
    streams = RngStreams(config.seed + 1)
    states = _adam_states(params)  # fresh optimizer for this stage

    entries: list[dict] = []
    t_start = time.perf_counter()
    for t in range(1, sched.T_total + 1):
        idx = streams.sampling.choice(n_p, size=config.N, replace=replace)
        batch = [pair_rows[i] for i in idx]
        X, tr_x = encode_batch(
            params, [bundle.instance_tokens[r[0]] for r in batch], "train", streams.dropout)
        Y, tr_y = encode_batch(
            params, [bundle.label_tokens[r[1]] for r in batch], "train", streams.dropout)
        positives = positives_by_key([r[2] for r in batch])
        lc, dX, dY = loss_cluster(X, Y, positives, config.temperature)

        buffers = GradBuffers.zeros_like(params)
        encode_backward_batch(tr_x, params, dX, buffers)
        encode_backward_batch(tr_y, params, dY, buffers)
        lr = lr_at(lr_sched, t)
        _apply(params, buffers, states, lr)

        if t % config.log_every == 0 or t == sched.T_total:
            entries.append({
                "step": t,
                "loss": lc,
                "loss_cluster": lc,
                "loss_label": 0.0,
                "loss_per_pair": lc / config.N,
                "K": None,
                "lr": lr,
                "stage": "selftrain",
                "fresh_optimizer": t == 1,
                "elapsed": time.perf_counter() - t_start,
            })
    return params, entries


def finetune(bundle: CorpusBundle, params: EncoderParams,
             fewshot: FewShotSubset, config: TrainConfig) -> tuple[EncoderParams, list[dict]]:
    """Fine-tune on true pairs with the plain contrastive loss at constant lr."""
    if not fewshot.pairs:
        raise ValueError("few-shot subset is empty")
    inst_index = {iid: i for i, iid in enumerate(bundle.instance_ids)}
    label_index = {lid: i for i, lid in enumerate(bundle.label_ids)}
    rows = [(inst_index[p.instance_id], label_index[p.label_id]) for p in fewshot.pairs]
    n_p = len(rows)
    replace = n_p < config.N

    streams = RngStreams(config.seed + 2)
    states = _adam_states(params)
    entries: list[dict] = [{
        "step": 0,
        "fewshot_mode": fewshot.mode,
        "fewshot_ratio": fewshot.ratio,
        "fewshot_seed": fewshot.seed,
        "fewshot_pairs": n_p,
        "finetune_lr": config.finetune_lr,
        "finetune_steps": config.finetune_steps,
    }]
    t_start = time.perf_counter()
    for t in range(1, config.finetune_steps + 1):
        idx = streams.sampling.choice(n_p, size=config.N, replace=replace)
        batch = [rows[i] for i in idx]
        X, tr_x = encode_batch(
            params, [bundle.instance_tokens[r[0]] for r in batch], "train", streams.dropout)
        Y, tr_y = encode_batch(
            params, [bundle.label_tokens[r[1]] for r in batch], "train", streams.dropout)
        loss, dX, dY = loss_contrastive(X, Y, config.temperature)

        buffers = GradBuffers.zeros_like(params)
        encode_backward_batch(tr_x, params, dX, buffers)
        encode_backward_batch(tr_y, params, dY, buffers)
        _apply(params, buffers, states, config.finetune_lr)

        if t % config.log_every == 0 or t == config.finetune_steps:
            entries.append({
                "step": t,
                "loss": loss,
                "loss_per_pair": loss / config.N,
                "lr": config.finetune_lr,
                "elapsed": time.perf_counter() - t_start,
            })
    return params, entries
