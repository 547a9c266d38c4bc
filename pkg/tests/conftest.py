import os

import pytest

HAND5_DIR = os.path.join(os.path.dirname(__file__), "data", "hand5")

# Frozen oracle values for the committed 5-document hand corpus, computed by
# direct evaluation of the smoothed-idf / L2-normalization / cosine formulas.
HAND5_IDF = {
    "apple": 1.4054651081081644,
    "banana": 1.6931471805599454,
    "cherry": 1.6931471805599454,
    "date": 2.09861228866811,
    "egg": 2.09861228866811,
}

HAND5_DOC_VECTORS = {
    0: {"apple": 0.6387105776, "banana": 0.7694470730},
    1: {"apple": 0.6387105776, "cherry": 0.7694470730},
    2: {"banana": 1.0},
    3: {"cherry": 0.6279137617, "date": 0.7782829228},
    4: {"apple": 0.5564505207, "egg": 0.8308807484},
}

HAND5_LABEL_VECTORS = {
    0: {"apple": 1.0},
    1: {"banana": 1.0},
    2: {"cherry": 0.6279137617, "date": 0.7782829228},
    3: {},
}

# per-document label rankings (ascending-label-id tie rule) and scores
HAND5_RANKINGS = {
    0: [(1, 0.7694470730), (0, 0.6387105776), (2, 0.0), (3, 0.0)],
    1: [(0, 0.6387105776), (2, 0.4831464060), (1, 0.0), (3, 0.0)],
    2: [(1, 1.0), (0, 0.0), (2, 0.0), (3, 0.0)],
    3: [(2, 1.0), (0, 0.0), (1, 0.0), (3, 0.0)],
    4: [(0, 0.5564505207), (1, 0.0), (2, 0.0), (3, 0.0)],
}

HAND5_TRUTH = {0: {0, 1}, 1: {0, 2}, 2: {1}, 3: {2}, 4: {0}}

HAND5_METRICS = {
    "precision": {1: 1.0, 3: 0.4666666666666666, 5: 0.28},
    "recall": {1: 0.8, 3: 1.0, 5: 1.0, 10: 1.0, 100: 1.0},
}


@pytest.fixture(scope="session")
def hand5_paths():
    return {
        "instances": os.path.join(HAND5_DIR, "instances.jsonl"),
        "labels": os.path.join(HAND5_DIR, "labels.jsonl"),
        "pairs": os.path.join(HAND5_DIR, "pairs.tsv"),
    }
