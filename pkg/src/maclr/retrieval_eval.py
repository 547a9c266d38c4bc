"""Exact inner-product top-k retrieval over label embeddings and P@k / R@k.

Search is exhaustive blocked matrix multiply (no approximate index): at desk
scale exact search is fast and keeps one source of approximation out of the
evaluation. Metrics are macro-averaged over instances; instances without any
ground-truth label are excluded from the averages and counted separately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, IntegrityError
from .encoder import EncoderParams, embed_corpus

PRECISION_KS = (1, 3, 5)
RECALL_KS = (1, 3, 5, 10, 100)


@dataclass
class LabelIndex:
    embeddings: np.ndarray        # (L, d)
    label_ids: np.ndarray         # (L,)

    def __post_init__(self):
        if len(self.label_ids) != self.embeddings.shape[0]:
            raise DimensionError("label ids must align with embedding rows")
        if len(set(self.label_ids.tolist())) != len(self.label_ids):
            raise IntegrityError("duplicate label ids in index")


@dataclass
class RankedPrediction:
    instance_id: int
    entries: list[tuple[int, float]]  # (label_id, score), scores non-increasing
    k: int


@dataclass
class MetricsReport:
    precision: dict[int, float]
    recall: dict[int, float]
    n_evaluated: int
    n_skipped: int = 0

    def to_json(self) -> str:
        payload = {
            "precision": {f"@{k}": v for k, v in sorted(self.precision.items())},
            "recall": {f"@{k}": v for k, v in sorted(self.recall.items())},
            "instances_evaluated": self.n_evaluated,
            "instances_without_truth": self.n_skipped,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _topk_rows(scores: np.ndarray, label_ids: np.ndarray, k: int) -> list[list[tuple[int, float]]]:
    """Per-row top-k of a score matrix; ties broken by ascending label id."""
    n, L = scores.shape
    k_eff = min(k, L)
    out = []
    for i in range(n):
        row = scores[i]
        # primary key: descending score; secondary: ascending label id
        order = np.lexsort((label_ids, -row))[:k_eff]
        out.append([(int(label_ids[j]), float(row[j])) for j in order])
    return out


def topk(index: LabelIndex, query_embedding: np.ndarray, k: int,
         instance_id: int = -1) -> RankedPrediction:
    """Exhaustive inner-product top-k for one query."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(query_embedding)
    if q.shape != (index.embeddings.shape[1],):
        raise DimensionError(
            f"query shape {q.shape} incompatible with index dim {index.embeddings.shape[1]}"
        )
    scores = (index.embeddings @ q)[None, :]
    entries = _topk_rows(scores, index.label_ids, k)[0]
    return RankedPrediction(instance_id=instance_id, entries=entries, k=k)


def batch_topk(index: LabelIndex, queries: np.ndarray, instance_ids, k: int,
               block: int = 256) -> list[RankedPrediction]:
    """Blocked exhaustive top-k for many queries."""
    preds = []
    n = queries.shape[0]
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        scores = queries[lo:hi] @ index.embeddings.T
        rows = _topk_rows(scores, index.label_ids, k)
        preds.extend(
            RankedPrediction(instance_id=int(instance_ids[lo + i]), entries=rows[i], k=k)
            for i in range(hi - lo)
        )
    return preds


def hits_at_k(prediction: RankedPrediction, truth: set[int], k: int) -> int:
    return sum(1 for label_id, _ in prediction.entries[:k] if label_id in truth)


def precision_at_k(prediction: RankedPrediction, truth: set[int], k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return hits_at_k(prediction, truth, k) / k


def recall_at_k(prediction: RankedPrediction, truth: set[int], k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not truth:
        raise ValueError("recall undefined for empty truth set")
    return hits_at_k(prediction, truth, k) / len(truth)


def metrics_from_predictions(predictions: list[RankedPrediction],
                             truth_by_instance: dict[int, set[int]],
                             k_list=RECALL_KS) -> MetricsReport:
    """Macro-averaged P@k / R@k over instances that have ground truth."""
    k_list = sorted(set(k_list))
    p_sums = {k: 0.0 for k in k_list if k in PRECISION_KS}
    r_sums = {k: 0.0 for k in k_list}
    n_eval = 0
    n_skip = 0
    for pred in predictions:
        truth = truth_by_instance.get(pred.instance_id, set())
        if not truth:
            n_skip += 1
            continue
        n_eval += 1
        for k in k_list:
            hits = hits_at_k(pred, truth, k)
            if k in p_sums:
                p_sums[k] += hits / k
            r_sums[k] += hits / len(truth)
    denom = max(n_eval, 1)
    return MetricsReport(
        precision={k: s / denom for k, s in p_sums.items()},
        recall={k: s / denom for k, s in r_sums.items()},
        n_evaluated=n_eval,
        n_skipped=n_skip,
    )


def evaluate(index: LabelIndex, params: EncoderParams, instance_ids,
             instance_token_seqs, test_pairs, k_list=RECALL_KS,
             workers: int = 1) -> tuple[MetricsReport, list[RankedPrediction]]:
    """Embed test instances (eval mode), retrieve, and compute macro metrics."""
    id_set = set(int(i) for i in instance_ids)
    label_set = set(index.label_ids.tolist())
    truth: dict[int, set[int]] = {}
    for pair in test_pairs:
        if pair.instance_id not in id_set:
            raise IntegrityError(f"test pair references unknown instance id {pair.instance_id}")
        if pair.label_id not in label_set:
            raise IntegrityError(f"test pair references unknown label id {pair.label_id}")
        truth.setdefault(pair.instance_id, set()).add(pair.label_id)
    embeddings = embed_corpus(params, instance_token_seqs, workers=workers)
    k_max = max(k_list)
    predictions = batch_topk(index, embeddings, list(instance_ids), k_max)
    report = metrics_from_predictions(predictions, truth, k_list)
    return report, predictions


# ---------------------------------------------------------------------------
# Predictions file: tab-separated "instance_id label_id score rank"
# ---------------------------------------------------------------------------


def write_predictions(predictions: list[RankedPrediction], fileobj) -> None:
    for pred in predictions:
        for rank, (label_id, score) in enumerate(pred.entries, start=1):
            fileobj.write(f"{pred.instance_id}\t{label_id}\t{score:.6f}\t{rank}\n")


def read_predictions(path) -> list[RankedPrediction]:
    by_instance: dict[int, list[tuple[int, float, int]]] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            iid, lid, score, rank = line.rstrip("\n").split("\t")
            by_instance.setdefault(int(iid), []).append((int(lid), float(score), int(rank)))
    preds = []
    for iid, rows in by_instance.items():
        rows.sort(key=lambda r: r[2])
        entries = [(lid, score) for lid, score, _ in rows]
        preds.append(RankedPrediction(instance_id=iid, entries=entries, k=len(entries)))
    return preds
