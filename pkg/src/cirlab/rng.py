"""Purpose-keyed random streams.

Every stochastic choice in the package draws from its own named stream derived
from (seed, purpose, *indices).  Streams are mutually independent, so adding or
removing draws on one stream (say, unlabeled-batch shuffling) never perturbs
another (labeled-batch shuffling).  This is what makes the zero-weight training
run bitwise-equal to the plain fine-tuning baseline under a shared seed.
"""

from __future__ import annotations

import numpy as np

# Stable stream identifiers. Never renumber: manifests and checkpoints produced
# with one numbering would silently stop reproducing under another.
DATASET_MEANS = 10
DATASET_TRAIN_NOISE = 11
DATASET_TEST_NOISE = 12
CLASS_ASSIGN = 20
LABELED_PERM = 21
UNLABELED_DRAW = 22
VAL_SPLIT = 30
SHUFFLE_LABELED = 31
SHUFFLE_UNLABELED = 32
MODEL_INIT = 40
HEAD_EXPAND = 41
INGEST_SPLIT = 50


def stream(seed: int, purpose: int, *indices: int) -> np.random.Generator:
    """Return a fresh generator for the (seed, purpose, indices) stream."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(purpose)] + [int(i) for i in indices]
    return np.random.default_rng(np.random.SeedSequence(key))
