"""Per-experience training loop with distillation and pseudo-label regularizers.

Order of operations within one experience (the ordering contract):

  1. embed the labeled batch with the start-of-experience model, refresh the
     prototype buffer;
  2. widen the head if the experience introduces unseen classes;
  3. pseudo-label the unlabeled batch once, from the same start-of-experience
     embeddings;
  4. split labeled data into train/val (stratified);
  5. run epochs of paired labeled/unlabeled mini-batches minimizing the total
     loss, with a step learning-rate schedule and accuracy-based early
     stopping that restores the best epoch's weights;
  6. snapshot the trained model as the next experience's "old model".

At experience 0 there is no old model, so the distillation and feature-drift
terms are exactly zero.  All randomness draws from purpose-keyed streams, so a
run with all auxiliary weights at zero performs bit-for-bit the same parameter
updates as the plain fine-tuning baseline (`run_finetune_baseline`).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .autodiff import Tensor
from .errors import ConfigError, ExperienceError, NumericalError
from .losses import (
    UNASSIGNED,
    LossBreakdown,
    LossWeights,
    align_to_old_head,
    kd_loss_graph,
    lfl_loss_graph,
    lwf_loss_graph,
    pseudo_loss_graph,
    sup_loss_graph,
    total_loss,
)
from .metrics import MetricsReport, cohorts_from_stream, evaluate
from .model import (
    ModelState,
    compute_gradients,
    expand_head,
    forward_features,
    forward_logits,
    init_model,
    load_model,
    param_items,
    save_model,
    snapshot,
)
from .prototypes import PrototypeBuffer, assign_pseudo_labels, compute_class_prototypes, update_buffer
from .stream import Experience, TestSet


@dataclass(frozen=True)
class TrainConfig:
    """All trainer hyperparameters; defaults follow the published recipe."""

    lr: float = 5e-4
    scheduler_step: int = 5
    scheduler_gamma: float = 0.5
    batch_size_train: int = 32
    batch_size_eval: int = 256
    max_epochs: int = 15
    early_stop_patience: int = 3
    val_fraction: float = 0.2
    weights: LossWeights = field(default_factory=LossWeights)
    pseudo_threshold: float = 0.5
    prototype_capacity: int = 100
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    fixed_head: bool = False
    reset_optimizer_each_exp: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.scheduler_gamma <= 1:
            raise ConfigError(f"scheduler_gamma must be in (0, 1], got {self.scheduler_gamma}")
        if self.scheduler_step < 1:
            raise ConfigError(f"scheduler_step must be >= 1, got {self.scheduler_step}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.batch_size_train < 1 or self.batch_size_eval < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.early_stop_patience < 1:
            raise ConfigError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if not self.hidden:
            raise ConfigError("hidden must name at least one layer width")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def scheduler_lr(base_lr: float, epoch: int, step: int, gamma: float) -> float:
    """Step decay: base_lr * gamma ** floor(epoch / step)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return base_lr * gamma ** (epoch // step)


@dataclass
class AdamState:
    """Adaptive-moment optimizer state (bias-corrected update rule)."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    current_lr: float = 0.0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def _ensure(self, name: str, shape: tuple[int, ...]) -> None:
        for store in (self.m, self.v):
            if name not in store:
                store[name] = np.zeros(shape)
            elif store[name].shape != shape:
                # parameter grew (head expansion): keep old moments, zero the new slots
                grown = np.zeros(shape)
                grown[tuple(slice(0, s) for s in store[name].shape)] = store[name]
                store[name] = grown


def adam_step(
    opt: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One in-place update of every parameter; returns (params, opt) for chaining."""
    opt.step_count += 1
    opt.current_lr = lr
    t = opt.step_count
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    for name in sorted(params):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        p = params[name]
        opt._ensure(name, p.shape)
        m, v = opt.m[name], opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        if not np.all(np.isfinite(p)):
            raise NumericalError(f"parameter {name!r} became non-finite after update")
    return params, opt


class LabelSpace:
    """Bidirectional map between head columns and class ids (column j <-> classes[j])."""

    def __init__(self, classes=()):
        self.classes: list[int] = [int(c) for c in classes]
        self._col = {c: j for j, c in enumerate(self.classes)}

    def __len__(self) -> int:
        return len(self.classes)

    def __contains__(self, c) -> bool:
        return int(c) in self._col

    def extend(self, new_classes) -> None:
        for c in new_classes:
            c = int(c)
            if c in self._col:
                raise ConfigError(f"class {c} already mapped to a head column")
            self._col[c] = len(self.classes)
            self.classes.append(c)

    def columns_for(self, labels: np.ndarray) -> np.ndarray:
        return np.array([self._col[int(c)] for c in labels], dtype=np.int64)

    def columns_for_optional(self, labels: np.ndarray) -> np.ndarray:
        """Like columns_for, but UNASSIGNED passes through."""
        return np.array(
            [self._col[int(c)] if c != UNASSIGNED else UNASSIGNED for c in labels], dtype=np.int64
        )


@dataclass
class TrainerState:
    model: ModelState
    old_model: ModelState | None
    buffer: PrototypeBuffer
    optimizer: AdamState
    label_space: LabelSpace
    seen_classes: set[int]
    experience_index: int = 0


@dataclass
class EpochRecord:
    """One structured training-log record (loss values are means over steps)."""

    experience: int
    epoch: int
    lr: float
    loss: LossBreakdown
    val_accuracy: float | None
    n_steps: int
    pseudo_assigned: int
    pseudo_precision: float | None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = asdict(self.loss)
        return d


class TrainerHooks:
    """Instrumentation points: subclass and override what you need."""

    def on_phase(self, name: str, experience: int, **info) -> None:
        pass

    def on_step(self, experience: int, epoch: int, step: int, breakdown: LossBreakdown) -> None:
        pass


def init_trainer(cfg: TrainConfig, d_in: int, fixed_classes=None) -> TrainerState:
    """Fresh trainer state; with `fixed_head` the head covers `fixed_classes` up front."""
    if cfg.fixed_head:
        if not fixed_classes:
            raise ConfigError("fixed_head requires the full learnable class list")
        classes = sorted(int(c) for c in fixed_classes)
    else:
        classes = []
    model = init_model(
        d_in, cfg.hidden, len(classes), rng.stream(cfg.seed, rng.MODEL_INIT), cfg.activation
    )
    return TrainerState(
        model=model,
        old_model=None,
        buffer=PrototypeBuffer(dim=model.d_feat, capacity=cfg.prototype_capacity),
        optimizer=AdamState(),
        label_space=LabelSpace(classes),
        seen_classes=set(),
        experience_index=0,
    )


def _stratified_split(labels: np.ndarray, val_fraction: float, seed: int, exp_index: int):
    """Per-class split of labeled indices into (train, val), seeded per experience."""
    r = rng.stream(seed, rng.VAL_SPLIT, exp_index)
    train_idx, val_idx = [], []
    for c in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == c)
        n_val = int(len(idx) * val_fraction)
        perm = r.permutation(len(idx))
        val_idx.append(idx[perm[:n_val]])
        train_idx.append(idx[perm[n_val:]])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def _expand_for_experience(state: TrainerState, exp: Experience, cfg: TrainConfig) -> list[int]:
    """Widen head + label space for classes this experience introduces."""
    new_classes = [c for c in sorted(set(exp.present_classes)) if c not in state.label_space]
    if new_classes:
        if cfg.fixed_head:
            raise ConfigError(
                f"fixed head does not cover classes {new_classes}; "
                "pass the full learnable set at init"
            )
        state.model = expand_head(
            state.model, len(new_classes), rng.stream(cfg.seed, rng.HEAD_EXPAND, exp.index)
        )
        state.label_space.extend(new_classes)
    state.seen_classes |= set(exp.present_classes)
    return new_classes


def _val_accuracy(state: TrainerState, x_val, y_val, cfg: TrainConfig) -> float | None:
    if len(y_val) == 0:
        return None
    return evaluate(state.model, state.label_space.classes, x_val, y_val,
                    batch_size=cfg.batch_size_eval)


def _method_step_gradients(
    model: ModelState,
    old_model: ModelState | None,
    x_l: np.ndarray,
    y_cols: np.ndarray,
    x_u: np.ndarray | None,
    pseudo_cols: np.ndarray | None,
    weights: LossWeights,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Loss breakdown + parameter gradients for one paired mini-batch."""
    has_old = old_model is not None
    has_u = x_u is not None and len(x_u) > 0
    use_lwf = has_old and (weights.alpha_labeled > 0 or weights.alpha_unlabeled > 0)
    use_lfl = has_old and weights.beta > 0
    use_pseudo = (
        has_u
        and weights.gamma > 0
        and pseudo_cols is not None
        and bool((pseudo_cols != UNASSIGNED).any())
    )
    need_u = has_u and (use_lwf or use_lfl or use_pseudo)

    consts = {}
    if use_lwf or use_lfl:
        h_l_old = forward_features(old_model, x_l)
        consts["z_l_old"] = forward_logits(old_model, h_l_old)
        consts["h_l_old"] = h_l_old
        if need_u:
            h_u_old = forward_features(old_model, x_u)
            consts["z_u_old"] = forward_logits(old_model, h_u_old)
            consts["h_u_old"] = h_u_old

    parts: dict[str, float] = {}

    def build(tm):
        h_l = tm.features(x_l)
        z_l = tm.logits(h_l)
        sup_t = sup_loss_graph(z_l, y_cols)
        parts["sup"] = sup_t.item()
        total_t = sup_t
        h_u = z_u = None
        if need_u:
            h_u = tm.features(x_u)
            if use_lwf or use_pseudo:
                z_u = tm.logits(h_u)
        if use_lwf:
            if need_u:
                lwf_t = lwf_loss_graph(z_l, consts["z_l_old"], z_u, consts["z_u_old"], weights)
            else:
                # no unlabeled batch: only the labeled distillation half exists
                z_l_cut, z_l_old = align_to_old_head(z_l, consts["z_l_old"])
                lwf_t = weights.alpha_labeled * kd_loss_graph(z_l_cut, z_l_old, weights.temperature)
            parts["lwf"] = lwf_t.item()
            total_t = total_t + lwf_t
        if use_lfl:
            if need_u:
                lfl_t = lfl_loss_graph(h_l, consts["h_l_old"], h_u, consts["h_u_old"], weights.beta)
            else:
                d = h_l - Tensor(consts["h_l_old"])
                lfl_t = weights.beta * (d * d).mean()
            parts["lfl"] = lfl_t.item()
            total_t = total_t + lfl_t
        if use_pseudo:
            pseudo_t = pseudo_loss_graph(z_u, pseudo_cols, weights.gamma)
            parts["pseudo"] = pseudo_t.item()
            total_t = total_t + pseudo_t
        return total_t

    _, grads = compute_gradients(model, build)
    breakdown = total_loss(
        parts.get("sup", 0.0), parts.get("lwf", 0.0), parts.get("lfl", 0.0), parts.get("pseudo", 0.0)
    )
    return breakdown, grads


def _cycled_batch(order: np.ndarray, step: int, batch_size: int) -> np.ndarray:
    """Window `step` of size `batch_size` into a shuffled order, wrapping around."""
    positions = np.arange(step * batch_size, (step + 1) * batch_size) % len(order)
    return order[positions]


def train_experience(
    state: TrainerState, exp: Experience, cfg: TrainConfig, hooks: TrainerHooks | None = None
) -> list[EpochRecord]:
    """Run one experience through the full method pipeline; mutates `state`."""
    if exp.labeled_y.size == 0:
        raise ExperienceError(f"experience {exp.index} has no labeled samples")
    hooks = hooks or TrainerHooks()
    w = cfg.weights

    # (1) prototypes from the start-of-experience embedder
    feats_l = forward_features(state.model, exp.labeled_x)
    fresh = compute_class_prototypes(feats_l, exp.labeled_y)
    state.buffer = update_buffer(state.buffer, fresh)
    hooks.on_phase("prototype_refresh", exp.index, classes=sorted(fresh))

    # (2) head expansion for unseen classes
    new_classes = _expand_for_experience(state, exp, cfg)
    hooks.on_phase("head_expand", exp.index, new_classes=new_classes)

    # (3) pseudo-label the unlabeled batch once (held fixed across epochs)
    if exp.unlabeled_x.size:
        feats_u = forward_features(state.model, exp.unlabeled_x)
        pseudo_classes = assign_pseudo_labels(state.buffer, feats_u, cfg.pseudo_threshold)
    else:
        pseudo_classes = np.empty(0, dtype=np.int64)
    pseudo_cols = state.label_space.columns_for_optional(pseudo_classes)
    assigned = pseudo_classes != UNASSIGNED
    n_assigned = int(assigned.sum())
    pseudo_precision = (
        float((pseudo_classes[assigned] == exp.unlabeled_true[assigned]).mean())
        if n_assigned
        else None
    )
    hooks.on_phase("pseudo_label", exp.index, assigned=n_assigned, precision=pseudo_precision)

    # (4) train/val split
    train_idx, val_idx = _stratified_split(exp.labeled_y, cfg.val_fraction, cfg.seed, exp.index)
    x_train = exp.labeled_x[train_idx]
    y_train_cols = state.label_space.columns_for(exp.labeled_y[train_idx])
    x_val, y_val = exp.labeled_x[val_idx], exp.labeled_y[val_idx]
    if cfg.reset_optimizer_each_exp:
        state.optimizer = AdamState()

    # (5) epoch loop
    n_train = len(train_idx)
    n_u = len(exp.unlabeled_x)
    steps_per_epoch = math.ceil(n_train / cfg.batch_size_train)
    has_old = state.old_model is not None
    need_u = n_u > 0 and (
        (has_old and (w.alpha_labeled > 0 or w.alpha_unlabeled > 0 or w.beta > 0))
        or (w.gamma > 0 and n_assigned > 0)
    )
    records: list[EpochRecord] = []
    best_acc = -np.inf
    best_params: ModelState | None = None
    epochs_since_best = 0
    for epoch in range(cfg.max_epochs):
        lr = scheduler_lr(cfg.lr, epoch, cfg.scheduler_step, cfg.scheduler_gamma)
        order_l = rng.stream(cfg.seed, rng.SHUFFLE_LABELED, exp.index, epoch).permutation(n_train)
        order_u = (
            rng.stream(cfg.seed, rng.SHUFFLE_UNLABELED, exp.index, epoch).permutation(n_u)
            if need_u
            else None
        )
        sums = np.zeros(4)
        for step in range(steps_per_epoch):
            rows = order_l[step * cfg.batch_size_train : (step + 1) * cfg.batch_size_train]
            x_b, y_b = x_train[rows], y_train_cols[rows]
            if need_u:
                urows = _cycled_batch(order_u, step, cfg.batch_size_train)
                x_ub, pseudo_b = exp.unlabeled_x[urows], pseudo_cols[urows]
            else:
                x_ub = pseudo_b = None
            breakdown, grads = _method_step_gradients(
                state.model, state.old_model, x_b, y_b, x_ub, pseudo_b, w
            )
            adam_step(state.optimizer, dict(param_items(state.model)), grads, lr)
            hooks.on_step(exp.index, epoch, step, breakdown)
            sums += (breakdown.sup, breakdown.lwf, breakdown.lfl, breakdown.pseudo)
        mean = sums / steps_per_epoch
        val_acc = _val_accuracy(state, x_val, y_val, cfg)
        records.append(
            EpochRecord(
                experience=exp.index,
                epoch=epoch,
                lr=lr,
                loss=total_loss(*mean),
                val_accuracy=val_acc,
                n_steps=steps_per_epoch,
                pseudo_assigned=n_assigned,
                pseudo_precision=pseudo_precision,
            )
        )
        if val_acc is not None:
            if val_acc > best_acc:
                best_acc, best_params, epochs_since_best = val_acc, snapshot(state.model), 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= cfg.early_stop_patience:
                    break
    if best_params is not None:
        state.model = best_params

    # (6) end-of-experience snapshot becomes the old model
    state.old_model = snapshot(state.model)
    hooks.on_phase("snapshot", exp.index)
    state.experience_index += 1
    return records


@dataclass
class RunResult:
    report: MetricsReport
    epoch_records: list[EpochRecord]
    state: TrainerState


def _evaluate_after_experience(
    state: TrainerState, test: TestSet, cohorts: dict[int, list[int]], t: int, cfg: TrainConfig
) -> tuple[list[float | None], float, float]:
    row: list[float | None] = []
    for k in sorted(cohorts):
        if k <= t:
            row.append(
                evaluate(state.model, state.label_space.classes, test.features, test.labels,
                         restrict_to=cohorts[k], batch_size=cfg.batch_size_eval)
            )
        else:
            row.append(None)
    seen_acc = evaluate(state.model, state.label_space.classes, test.features, test.labels,
                        restrict_to=state.seen_classes, batch_size=cfg.batch_size_eval)
    full_acc = evaluate(state.model, state.label_space.classes, test.features, test.labels,
                        batch_size=cfg.batch_size_eval)
    return row, seen_acc, full_acc


def run_stream(
    stream: list[Experience],
    test: TestSet,
    cfg: TrainConfig,
    scenario: str = "",
    label: str = "method",
    hooks: TrainerHooks | None = None,
) -> RunResult:
    """Fold the method trainer over a stream, evaluating after each experience."""
    if not stream:
        raise ExperienceError("stream is empty")
    state = init_trainer(cfg, stream[0].labeled_x.shape[1], fixed_classes=test.class_ids)
    cohorts = cohorts_from_stream(stream)
    matrix, seen_accs, full_accs = [], [], []
    all_records: list[EpochRecord] = []
    for exp in stream:
        all_records.extend(train_experience(state, exp, cfg, hooks))
        row, seen_acc, full_acc = _evaluate_after_experience(state, test, cohorts, exp.index, cfg)
        matrix.append(row)
        seen_accs.append(seen_acc)
        full_accs.append(full_acc)
    report = MetricsReport(
        scenario=scenario,
        seed=cfg.seed,
        cohorts=cohorts,
        accuracy_matrix=matrix,
        seen_accuracy=seen_accs,
        full_accuracy=full_accs,
        final_accuracy=full_accs[-1],
        label=label,
    )
    return RunResult(report, all_records, state)


# -- plain fine-tuning baseline ---------------------------------------------------


def _finetune_experience(
    state: TrainerState, exp: Experience, cfg: TrainConfig, hooks: TrainerHooks | None = None
) -> list[EpochRecord]:
    """Supervised-only reference pipeline: no buffer, no pseudo-labels, no old model."""
    if exp.labeled_y.size == 0:
        raise ExperienceError(f"experience {exp.index} has no labeled samples")
    hooks = hooks or TrainerHooks()
    _expand_for_experience(state, exp, cfg)
    train_idx, val_idx = _stratified_split(exp.labeled_y, cfg.val_fraction, cfg.seed, exp.index)
    x_train = exp.labeled_x[train_idx]
    y_train_cols = state.label_space.columns_for(exp.labeled_y[train_idx])
    x_val, y_val = exp.labeled_x[val_idx], exp.labeled_y[val_idx]
    if cfg.reset_optimizer_each_exp:
        state.optimizer = AdamState()
    n_train = len(train_idx)
    steps_per_epoch = math.ceil(n_train / cfg.batch_size_train)
    records: list[EpochRecord] = []
    best_acc = -np.inf
    best_params = None
    epochs_since_best = 0
    for epoch in range(cfg.max_epochs):
        lr = scheduler_lr(cfg.lr, epoch, cfg.scheduler_step, cfg.scheduler_gamma)
        order_l = rng.stream(cfg.seed, rng.SHUFFLE_LABELED, exp.index, epoch).permutation(n_train)
        sup_sum = 0.0
        for step in range(steps_per_epoch):
            rows = order_l[step * cfg.batch_size_train : (step + 1) * cfg.batch_size_train]
            x_b, y_b = x_train[rows], y_train_cols[rows]

            def build(tm):
                return sup_loss_graph(tm.logits(tm.features(x_b)), y_b)

            value, grads = compute_gradients(state.model, build)
            adam_step(state.optimizer, dict(param_items(state.model)), grads, lr)
            breakdown = total_loss(value)
            hooks.on_step(exp.index, epoch, step, breakdown)
            sup_sum += value
        val_acc = _val_accuracy(state, x_val, y_val, cfg)
        records.append(
            EpochRecord(
                experience=exp.index,
                epoch=epoch,
                lr=lr,
                loss=total_loss(sup_sum / steps_per_epoch),
                val_accuracy=val_acc,
                n_steps=steps_per_epoch,
                pseudo_assigned=0,
                pseudo_precision=None,
            )
        )
        if val_acc is not None:
            if val_acc > best_acc:
                best_acc, best_params, epochs_since_best = val_acc, snapshot(state.model), 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= cfg.early_stop_patience:
                    break
    if best_params is not None:
        state.model = best_params
    state.experience_index += 1
    return records


def run_finetune_baseline(
    stream: list[Experience],
    test: TestSet,
    cfg: TrainConfig,
    scenario: str = "",
    label: str = "finetune-baseline",
    hooks: TrainerHooks | None = None,
) -> RunResult:
    """Plain supervised fine-tuning over the labeled stream (the comparison baseline)."""
    if not stream:
        raise ExperienceError("stream is empty")
    state = init_trainer(cfg, stream[0].labeled_x.shape[1], fixed_classes=test.class_ids)
    cohorts = cohorts_from_stream(stream)
    matrix, seen_accs, full_accs = [], [], []
    all_records: list[EpochRecord] = []
    for exp in stream:
        all_records.extend(_finetune_experience(state, exp, cfg, hooks))
        row, seen_acc, full_acc = _evaluate_after_experience(state, test, cohorts, exp.index, cfg)
        matrix.append(row)
        seen_accs.append(seen_acc)
        full_accs.append(full_acc)
    report = MetricsReport(
        scenario=scenario,
        seed=cfg.seed,
        cohorts=cohorts,
        accuracy_matrix=matrix,
        seen_accuracy=seen_accs,
        full_accuracy=full_accs,
        final_accuracy=full_accs[-1],
        label=label,
    )
    return RunResult(report, all_records, state)


# -- trainer checkpointing ---------------------------------------------------------


def save_trainer_checkpoint(path, state: TrainerState) -> None:
    """Single .npz holding model, old model, buffer, optimizer, and label space."""
    extras: dict[str, np.ndarray] = {}
    if state.old_model is not None:
        for name, arr in param_items(state.old_model):
            extras["old." + name] = arr
    for name, arr in state.optimizer.m.items():
        extras["adam.m." + name] = arr
    for name, arr in state.optimizer.v.items():
        extras["adam.v." + name] = arr
    buf_ids = np.array(state.buffer.class_ids(), dtype=np.int64)
    extras["buffer.class_ids"] = buf_ids
    extras["buffer.vectors"] = (
        np.stack([state.buffer.entries[int(c)] for c in buf_ids])
        if len(buf_ids)
        else np.zeros((0, state.buffer.dim))
    )
    extras["space.classes"] = np.array(state.label_space.classes, dtype=np.int64)
    extras["seen.classes"] = np.array(sorted(state.seen_classes), dtype=np.int64)
    meta = {
        "experience_index": state.experience_index,
        "has_old": state.old_model is not None,
        "buffer_capacity": state.buffer.capacity,
        "buffer_dim": state.buffer.dim,
        "adam": {
            "beta1": state.optimizer.beta1,
            "beta2": state.optimizer.beta2,
            "eps": state.optimizer.eps,
            "step_count": state.optimizer.step_count,
            "current_lr": state.optimizer.current_lr,
        },
    }
    save_model(path, state.model, extra_arrays=extras, extra_meta=meta)


def load_trainer_checkpoint(path) -> TrainerState:
    model, extras, meta = load_model(path)
    old = None
    if meta["has_old"]:
        n_layers = meta["n_layers"]
        old = ModelState(
            [extras[f"old.layer{i}.w"] for i in range(n_layers)],
            [extras[f"old.layer{i}.b"] for i in range(n_layers)],
            extras["old.head.w"],
            extras["old.head.b"],
            meta["activation"],
        )
    adam_meta = meta["adam"]
    opt = AdamState(
        beta1=adam_meta["beta1"],
        beta2=adam_meta["beta2"],
        eps=adam_meta["eps"],
        step_count=adam_meta["step_count"],
        current_lr=adam_meta["current_lr"],
        m={k[len("adam.m."):]: v for k, v in extras.items() if k.startswith("adam.m.")},
        v={k[len("adam.v."):]: v for k, v in extras.items() if k.startswith("adam.v.")},
    )
    entries = {
        int(c): extras["buffer.vectors"][i] for i, c in enumerate(extras["buffer.class_ids"])
    }
    buffer = PrototypeBuffer(dim=meta["buffer_dim"], capacity=meta["buffer_capacity"], entries=entries)
    return TrainerState(
        model=model,
        old_model=old,
        buffer=buffer,
        optimizer=opt,
        label_space=LabelSpace(extras["space.classes"].tolist()),
        seen_classes=set(extras["seen.classes"].tolist()),
        experience_index=meta["experience_index"],
    )
