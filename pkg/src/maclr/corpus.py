"""Corpus loading, tokenization, vocabulary, ICT pair construction, few-shot sampling.

File formats:
  instances / labels: JSON-lines, one ``{"id": int, "text": str}`` per line.
  pairs: tab-separated ``instance_id<TAB>label_id``.
  vocabulary: one token per line, line number = id, line 0 reserved ``<unk>``.
"""

from __future__ import annotations

import json
import logging
import math
import re
import string
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError, ParseError

log = logging.getLogger(__name__)

UNK_TOKEN = "<unk>"
UNK_ID = 0

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


@dataclass(frozen=True)
class Instance:
    id: int
    text: str


@dataclass(frozen=True)
class Label:
    id: int
    text: str


@dataclass(frozen=True)
class PositivePair:
    instance_id: int
    label_id: int


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]
    min_frequency: int

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def hash64(self) -> int:
        """FNV-1a 64-bit over the id-ordered token list; guards checkpoints."""
        h = 0xCBF29CE484222325
        for tok in self.id_to_token:
            for b in tok.encode("utf-8") + b"\n":
                h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
        return h


@dataclass(frozen=True)
class IctPair:
    context_ids: tuple[int, ...]
    title_ids: tuple[int, ...]
    source_instance: int


@dataclass
class FewShotSubset:
    pairs: list[PositivePair]
    mode: str
    ratio: float
    seed: int


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _load_jsonl(path, kind, ctor):
    items = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                item_id = int(obj["id"])
                text = str(obj["text"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ParseError(f"{path}:{lineno}: malformed {kind} line ({e})") from e
            if item_id < 0:
                raise ParseError(f"{path}:{lineno}: negative id {item_id}")
            if item_id in seen:
                raise IntegrityError(f"{path}:{lineno}: duplicate {kind} id {item_id}")
            seen.add(item_id)
            items.append(ctor(item_id, text))
    return items


def load_instances(path) -> list[Instance]:
    return _load_jsonl(path, "instance", Instance)


def load_labels(path) -> list[Label]:
    return _load_jsonl(path, "label", Label)


def load_pairs(path, instance_ids: set[int], label_ids: set[int]) -> list[PositivePair]:
    pairs = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 tab-separated columns")
            try:
                iid, lid = int(cols[0]), int(cols[1])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: non-integer id ({e})") from e
            if iid not in instance_ids:
                raise IntegrityError(f"{path}:{lineno}: pair references unknown instance id {iid}")
            if lid not in label_ids:
                raise IntegrityError(f"{path}:{lineno}: pair references unknown label id {lid}")
            if (iid, lid) in seen:
                continue
            seen.add((iid, lid))
            pairs.append(PositivePair(iid, lid))
    return pairs


def load_corpus(instances_path, labels_path, pairs_path=None):
    """Load (instances, labels, pairs); pairs deduplicated, dangling ids rejected."""
    instances = load_instances(instances_path)
    labels = load_labels(labels_path)
    n_empty = sum(1 for x in instances if not x.text.strip())
    if n_empty:
        log.warning("%d instance(s) have empty text", n_empty)
    pairs: list[PositivePair] = []
    if pairs_path is not None:
        pairs = load_pairs(
            pairs_path,
            {x.id for x in instances},
            {y.id for y in labels},
        )
    return instances, labels, pairs


# ---------------------------------------------------------------------------
# Tokenization and sentence splitting
# ---------------------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


def split_sentences(text: str) -> list[str]:
    """Split after '.', '!' or '?' followed by whitespace; terminators kept.

    Deliberately naive about abbreviations ("Ver. 2" splits).
    """
    parts = _SENTENCE_SPLIT.split(text)
    return [p for p in (s.strip() for s in parts) if p]


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


def build_vocab(instances, labels, min_frequency: int = 2) -> Vocabulary:
    """Frequency vocabulary over instance + label text.

    Ids are contiguous from 0 (UNK), ordered by descending frequency with
    lexicographic tie-break, so the same corpus always produces the same
    bytes on disk.
    """
    if min_frequency < 1:
        raise ValueError(f"min_frequency must be >= 1, got {min_frequency}")
    counts: Counter[str] = Counter()
    for item in list(instances) + list(labels):
        counts.update(tokenize(item.text))
    kept = [(tok, c) for tok, c in counts.items() if c >= min_frequency]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    id_to_token = [UNK_TOKEN] + [tok for tok, _ in kept]
    if len(id_to_token) == 1:
        log.warning("vocabulary contains only %s (empty corpus or threshold too high)", UNK_TOKEN)
    return Vocabulary(
        token_to_id={tok: i for i, tok in enumerate(id_to_token)},
        id_to_token=id_to_token,
        min_frequency=min_frequency,
    )


def save_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for tok in vocab.id_to_token:
            f.write(tok + "\n")


def load_vocab(path, min_frequency: int = 0) -> Vocabulary:
    with open(path, encoding="utf-8") as f:
        id_to_token = [line.rstrip("\n") for line in f]
    if not id_to_token or id_to_token[0] != UNK_TOKEN:
        raise ParseError(f"{path}: line 0 must be the reserved token {UNK_TOKEN!r}")
    return Vocabulary(
        token_to_id={tok: i for i, tok in enumerate(id_to_token)},
        id_to_token=id_to_token,
        min_frequency=min_frequency,
    )


# ---------------------------------------------------------------------------
# ICT pair construction
# ---------------------------------------------------------------------------


def make_ict_pairs(instances, vocab: Vocabulary, instance_max_len: int,
                   label_max_len: int) -> tuple[list[IctPair], int]:
    """Build (context, title) pseudo pairs: title = first sentence, context = rest.

    Single-sentence instances fall back to a half split (first ceil(n/2)
    tokens as title). Instances whose title or context tokenizes to empty
    are skipped; returns (pairs, skipped). At most one pair per instance.
    """
    if instance_max_len < 1 or label_max_len < 1:
        raise ValueError("max lengths must be >= 1")
    pairs = []
    skipped = 0
    for inst in instances:
        sentences = split_sentences(inst.text)
        if len(sentences) >= 2:
            title_tokens = tokenize(sentences[0])[:label_max_len]
            context_tokens = tokenize(" ".join(sentences[1:]))[:instance_max_len]
        else:
            tokens = tokenize(inst.text)
            head = min(math.ceil(len(tokens) / 2), label_max_len)
            title_tokens = tokens[:head]
            context_tokens = tokens[head:][:instance_max_len]
        if not title_tokens or not context_tokens:
            skipped += 1
            continue
        pairs.append(IctPair(
            context_ids=tuple(vocab.encode(context_tokens)),
            title_ids=tuple(vocab.encode(title_tokens)),
            source_instance=inst.id,
        ))
    return pairs, skipped


# ---------------------------------------------------------------------------
# Few-shot subset sampling
# ---------------------------------------------------------------------------


def sample_fewshot(pairs: list[PositivePair], mode: str, ratio: float,
                   seed: int) -> FewShotSubset:
    """Sample a few-shot subset of positive pairs.

    mode "label-coverage": sample ceil(ratio * L_used) of the labels that
    appear in pairs, keep every pair touching them. mode "pair-ratio":
    sample ceil(ratio * |pairs|) pairs without replacement.
    """
    if not pairs:
        raise ValueError("sample_fewshot requires a non-empty pair list")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if mode not in ("label-coverage", "pair-ratio"):
        raise ValueError(f"unknown few-shot mode {mode!r}")
    rng = np.random.default_rng(seed)
    if mode == "label-coverage":
        labels_used = sorted({p.label_id for p in pairs})
        n_pick = math.ceil(ratio * len(labels_used))
        picked = set(rng.choice(labels_used, size=n_pick, replace=False).tolist())
        subset = [p for p in pairs if p.label_id in picked]
    else:
        n_pick = math.ceil(ratio * len(pairs))
        idx = rng.choice(len(pairs), size=n_pick, replace=False)
        subset = [pairs[i] for i in sorted(idx.tolist())]
    return FewShotSubset(pairs=subset, mode=mode, ratio=ratio, seed=seed)
