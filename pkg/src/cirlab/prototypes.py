"""Per-class prototype buffer and cosine-similarity pseudo-labeling.

A prototype is the mean feature vector of a class's labeled samples.  The
buffer keeps one vector per class; on revisit the stored vector becomes the
unweighted midpoint of old and fresh.  Unlabeled samples get the label of
their most-similar prototype, but only when that cosine similarity clears
the confidence threshold — everything else stays unassigned so unseen and
distractor classes cannot contaminate training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BufferCapacityError, ShapeError
from .losses import UNASSIGNED


@dataclass
class PrototypeBuffer:
    """Capacity-bounded map from class id to prototype vector."""

    dim: int
    capacity: int = 100
    entries: dict[int, np.ndarray] = field(default_factory=dict)

    def class_ids(self) -> list[int]:
        return sorted(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def compute_class_prototypes(features, labels) -> dict[int, np.ndarray]:
    """Mean feature vector per class present in the batch. Empty input -> {}."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if features.size == 0 or labels.size == 0:
        return {}
    if features.ndim != 2 or features.shape[0] != labels.size:
        raise ShapeError(f"features {features.shape} do not align with {labels.size} labels")
    out: dict[int, np.ndarray] = {}
    for c in sorted(set(labels.tolist())):
        out[c] = features[labels == c].mean(axis=0)
    return out


def update_buffer(buffer: PrototypeBuffer, fresh: dict[int, np.ndarray]) -> PrototypeBuffer:
    """Merge fresh prototypes into a new buffer.

    Revisited classes average 50/50 with the stored vector; new classes are
    stored as-is; untouched classes carry over unchanged.
    """
    entries = {c: v.copy() for c, v in buffer.entries.items()}
    for c in sorted(fresh):
        v = np.asarray(fresh[c], dtype=np.float64)
        if v.shape != (buffer.dim,):
            raise ShapeError(f"prototype for class {c} has shape {v.shape}, expected ({buffer.dim},)")
        if c in entries:
            entries[c] = (entries[c] + v) / 2.0
        else:
            entries[c] = v.copy()
    if len(entries) > buffer.capacity:
        raise BufferCapacityError(
            f"{len(entries)} classes exceed buffer capacity {buffer.capacity}"
        )
    return PrototypeBuffer(dim=buffer.dim, capacity=buffer.capacity, entries=entries)


def assign_pseudo_labels(buffer: PrototypeBuffer, features_u, tau: float) -> np.ndarray:
    """Nearest-prototype labels by cosine similarity, gated by threshold tau.

    Returns an int array aligned with the batch; UNASSIGNED (-1) marks samples
    whose best similarity does not exceed tau.  Zero-norm features or
    prototypes contribute similarity 0.  Exact similarity ties resolve to the
    smallest class id.
    """
    features_u = np.asarray(features_u, dtype=np.float64)
    if features_u.ndim == 1:
        features_u = features_u[None, :]
    n = features_u.shape[0]
    if not buffer.entries:
        return np.full(n, UNASSIGNED, dtype=np.int64)
    if features_u.shape[1] != buffer.dim:
        raise ShapeError(f"features have dim {features_u.shape[1]}, buffer stores dim {buffer.dim}")
    ids = np.array(buffer.class_ids(), dtype=np.int64)
    protos = np.stack([buffer.entries[int(c)] for c in ids])
    f_norm = np.linalg.norm(features_u, axis=1)
    p_norm = np.linalg.norm(protos, axis=1)
    denom = np.outer(f_norm, p_norm)
    sims = np.divide(features_u @ protos.T, denom, out=np.zeros((n, len(ids))), where=denom > 0)
    # argmax over columns sorted by class id -> first max is the smallest id
    best = sims.argmax(axis=1)
    best_sim = sims[np.arange(n), best]
    return np.where(best_sim > tau, ids[best], UNASSIGNED)
