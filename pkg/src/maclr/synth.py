"""Synthetic planted-topic corpora for demos and end-to-end checks.

Each topic owns a disjoint vocabulary; instances mix their topic's words with
shared noise words. The topic's label text is drawn from the topic vocabulary,
so a well-trained encoder can recover instance -> topic label with no
supervision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import Instance, Label, PositivePair


@dataclass
class SyntheticCorpus:
    instances: list[Instance]
    labels: list[Label]
    pairs: list[PositivePair]              # instance -> its topic label
    test_instances: list[Instance]
    test_pairs: list[PositivePair]


def _make_instance(rng, topic_words, noise_words, noise_prob,
                   n_sentences, words_per_sentence) -> str:
    sentences = []
    for _ in range(n_sentences):
        words = []
        for _ in range(words_per_sentence):
            if rng.random() < noise_prob:
                words.append(noise_words[rng.integers(len(noise_words))])
            else:
                words.append(topic_words[rng.integers(len(topic_words))])
        sentences.append(" ".join(words) + ".")
    return " ".join(sentences)


def make_planted_corpus(n_topics: int = 20, n_instances: int = 2000,
                        n_test: int = 400, seed: int = 0,
                        words_per_topic: int = 30, n_noise_words: int = 100,
                        noise_prob: float = 0.25) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    topic_vocab = [
        [f"t{t:02d}w{j:02d}" for j in range(words_per_topic)]
        for t in range(n_topics)
    ]
    noise_words = [f"noise{j:03d}" for j in range(n_noise_words)]

    labels = []
    for t in range(n_topics):
        picks = rng.choice(words_per_topic, size=5, replace=False)
        labels.append(Label(id=t, text=" ".join(topic_vocab[t][j] for j in picks)))

    def gen(count, id_base):
        instances, pairs = [], []
        for i in range(count):
            topic = int(rng.integers(n_topics))
            text = _make_instance(
                rng, topic_vocab[topic], noise_words, noise_prob,
                n_sentences=int(rng.integers(3, 7)),
                words_per_sentence=int(rng.integers(5, 11)),
            )
            instances.append(Instance(id=id_base + i, text=text))
            pairs.append(PositivePair(instance_id=id_base + i, label_id=topic))
        return instances, pairs

    train_instances, train_pairs = gen(n_instances, 0)
    test_instances, test_pairs = gen(n_test, n_instances)
    return SyntheticCorpus(
        instances=train_instances, labels=labels, pairs=train_pairs,
        test_instances=test_instances, test_pairs=test_pairs,
    )


def write_corpus_files(corpus: SyntheticCorpus, out_dir) -> dict[str, str]:
    """Write the standard corpus files; returns the path map."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "instances": os.path.join(out_dir, "instances.jsonl"),
        "labels": os.path.join(out_dir, "labels.jsonl"),
        "pairs": os.path.join(out_dir, "pairs.tsv"),
        "test_instances": os.path.join(out_dir, "test_instances.jsonl"),
        "test_pairs": os.path.join(out_dir, "test_pairs.tsv"),
    }
    with open(paths["instances"], "w", encoding="utf-8") as f:
        for x in corpus.instances:
            f.write(json.dumps({"id": x.id, "text": x.text}) + "\n")
    with open(paths["labels"], "w", encoding="utf-8") as f:
        for y in corpus.labels:
            f.write(json.dumps({"id": y.id, "text": y.text}) + "\n")
    with open(paths["pairs"], "w", encoding="utf-8") as f:
        for p in corpus.pairs:
            f.write(f"{p.instance_id}\t{p.label_id}\n")
    with open(paths["test_instances"], "w", encoding="utf-8") as f:
        for x in corpus.test_instances:
            f.write(json.dumps({"id": x.id, "text": x.text}) + "\n")
    with open(paths["test_pairs"], "w", encoding="utf-8") as f:
        for p in corpus.test_pairs:
            f.write(f"{p.instance_id}\t{p.label_id}\n")
    return paths
