"""Loss terms for the continual trainer.

Four components: supervised cross-entropy on labeled data, a soft-target
distillation penalty against the old model's logits (labeled + unlabeled),
a feature-drift MSE penalty against the old model's features (labeled +
unlabeled), and a cross-entropy on confidently pseudo-labeled unlabeled
samples.  The total loss is their plain sum; the distillation/drift/pseudo
weights live inside the individual terms.

Every term is a mean over its batch, so values are comparable across batch
sizes.  Each function comes in two flavors: a graph-building variant over
autodiff Tensors (used by the trainer) and a float-returning wrapper with
the same math (the public surface, and what the tests oracle against).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor
from .errors import NumericalError, ShapeError

UNASSIGNED = -1  # pseudo-label sentinel


@dataclass(frozen=True)
class LossWeights:
    """Weights for the auxiliary loss terms plus the distillation temperature.

    alpha_labeled / alpha_unlabeled scale the logit-distillation terms,
    beta scales the feature-drift MSE terms, gamma scales the pseudo-label
    cross-entropy.  Published defaults: 2, 2, 1000, 0.25 with temperature 2.
    """

    alpha_labeled: float = 2.0
    alpha_unlabeled: float = 2.0
    beta: float = 1000.0
    gamma: float = 0.25
    temperature: float = 2.0

    def __post_init__(self):
        vals = (self.alpha_labeled, self.alpha_unlabeled, self.beta, self.gamma, self.temperature)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"loss weights must be finite: {self}")
        if any(v < 0 for v in vals[:4]):
            raise ValueError(f"loss weights must be >= 0: {self}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")

    def all_auxiliary_zero(self) -> bool:
        return self.alpha_labeled == 0 and self.alpha_unlabeled == 0 and self.beta == 0 and self.gamma == 0


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values of one training step (for logging and assertions)."""

    sup: float
    lwf: float
    lfl: float
    pseudo: float
    total: float


def _as_logit_batch(z) -> Tensor:
    t = as_tensor(z)
    if t.data.ndim == 1:
        t = t[None, :]
    if t.data.ndim != 2:
        raise ShapeError(f"logits must be a (batch, classes) array, got shape {t.data.shape}")
    return t


def _check_labels(labels, n_classes: int, what: str) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise IndexError(f"{what} out of range [0, {n_classes})")
    return labels


# -- supervised cross-entropy -------------------------------------------------


def sup_loss_graph(z, labels) -> Tensor:
    z = _as_logit_batch(z)
    n, c = z.data.shape
    if n == 0:
        raise ShapeError("supervised loss needs a nonempty batch")
    labels = _check_labels(labels, c, "label")
    if labels.size != n:
        raise ShapeError(f"batch of {n} logits vs {labels.size} labels")
    picked = z.log_softmax()[np.arange(n), labels]
    return -picked.mean()


def sup_loss(logits, labels) -> float:
    """Mean cross-entropy of softmax(logits) against integer labels."""
    return sup_loss_graph(logits, labels).item()


# -- logit distillation --------------------------------------------------------


def kd_loss_graph(z, z_old, temperature: float) -> Tensor:
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = _as_logit_batch(z)
    z_old = _as_logit_batch(z_old)
    if z.data.shape != z_old.data.shape:
        raise ShapeError(f"distillation logits differ in shape: {z.data.shape} vs {z_old.data.shape}")
    n = z.data.shape[0]
    lp = (z / temperature).log_softmax()
    lq = (z_old / temperature).log_softmax()
    # mean over batch of KL(current || old); rows sum then /n
    return (lp.exp() * (lp - lq)).sum() / n


def kd_loss(z, z_old, temperature: float) -> float:
    """Mean KL divergence between tempered softmaxes, current distribution first.

    No temperature-squared rescaling is applied.
    """
    return kd_loss_graph(z, z_old, temperature).item()


def align_to_old_head(z, z_old):
    """Truncate current logits to the old head's class count.

    Under lazy head expansion the old model has no outputs for classes it
    never saw, so distillation compares only the shared leading columns.
    """
    z = _as_logit_batch(z)
    z_old = _as_logit_batch(z_old)
    c, c_old = z.data.shape[1], z_old.data.shape[1]
    if c < c_old:
        raise ShapeError(f"old head has more classes ({c_old}) than current ({c})")
    if c > c_old:
        z = z[:, :c_old]
    return z, z_old


def lwf_loss_graph(z_l, z_l_old, z_u, z_u_old, weights: LossWeights) -> Tensor:
    z_l, z_l_old = align_to_old_head(z_l, z_l_old)
    z_u, z_u_old = align_to_old_head(z_u, z_u_old)
    t = weights.temperature
    return (
        weights.alpha_labeled * kd_loss_graph(z_l, z_l_old, t)
        + weights.alpha_unlabeled * kd_loss_graph(z_u, z_u_old, t)
    )


def lwf_loss(z_l, z_l_old, z_u, z_u_old, weights: LossWeights) -> float:
    """Weighted distillation over the labeled and unlabeled streams."""
    return lwf_loss_graph(z_l, z_l_old, z_u, z_u_old, weights).item()


# -- feature drift -------------------------------------------------------------


def _mse_graph(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"feature shapes differ: {a.data.shape} vs {b.data.shape}")
    d = a - b
    return (d * d).mean()


def lfl_loss_graph(h_l, h_l_old, h_u, h_u_old, beta: float) -> Tensor:
    return beta * (_mse_graph(h_l, h_l_old) + _mse_graph(h_u, h_u_old))


def lfl_loss(h_l, h_l_old, h_u, h_u_old, beta: float) -> float:
    """beta * (MSE of labeled features + MSE of unlabeled features) vs the old model.

    MSE is the mean over both batch and feature dimensions.
    """
    return lfl_loss_graph(h_l, h_l_old, h_u, h_u_old, beta).item()


# -- pseudo-label cross-entropy --------------------------------------------------


def pseudo_loss_graph(z_u, pseudo_labels, gamma: float) -> Tensor:
    z_u = _as_logit_batch(z_u)
    n, c = z_u.data.shape
    pseudo = np.asarray(pseudo_labels, dtype=np.int64).reshape(-1)
    if pseudo.size != n:
        raise ShapeError(f"batch of {n} logits vs {pseudo.size} pseudo-labels")
    assigned = np.flatnonzero(pseudo != UNASSIGNED)
    if assigned.size == 0:
        return Tensor(0.0)
    _check_labels(pseudo[assigned], c, "pseudo-label")
    picked = z_u.log_softmax()[assigned, pseudo[assigned]]
    return gamma * -picked.mean()


def pseudo_loss(logits_u, pseudo_labels, gamma: float) -> float:
    """gamma * mean cross-entropy over the samples whose pseudo-label is assigned.

    Unassigned entries are marked with -1 and excluded; with none assigned
    the loss is exactly 0.
    """
    return pseudo_loss_graph(logits_u, pseudo_labels, gamma).item()


# -- combination -----------------------------------------------------------------


def total_loss(sup: float, lwf: float = 0.0, lfl: float = 0.0, pseudo: float = 0.0) -> LossBreakdown:
    """Sum the four components, failing loudly on any non-finite term."""
    parts = {"sup": float(sup), "lwf": float(lwf), "lfl": float(lfl), "pseudo": float(pseudo)}
    for name, value in parts.items():
        if not np.isfinite(value):
            raise NumericalError(f"loss component {name!r} is non-finite: {value!r}")
    return LossBreakdown(total=sum(parts.values()), **parts)
