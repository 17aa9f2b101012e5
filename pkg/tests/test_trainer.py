"""Trainer: optimizer oracles, schedule, ordering contract, reduction, determinism."""

import math

import numpy as np
import pytest

from cirlab.errors import ConfigError, NumericalError
from cirlab.losses import LossWeights
from cirlab.model import param_items
from cirlab.stream import StreamConfig, build_stream, build_test_set, generate_synthetic_dataset
from cirlab.trainer import (
    AdamState,
    LabelSpace,
    TrainConfig,
    TrainerHooks,
    adam_step,
    init_trainer,
    run_finetune_baseline,
    run_stream,
    scheduler_lr,
    train_experience,
    load_trainer_checkpoint,
    save_trainer_checkpoint,
)

TINY_STREAM = dict(
    n_experiences=4,
    n_learnable=4,
    n_distractor=1,
    classes_per_exp=2,
    labeled_per_exp=16,
    unlabeled_per_exp=24,
    d_in=6,
    test_per_class=8,
    scenario="S2",
)

TINY_TRAIN = dict(max_epochs=3, batch_size_train=8, hidden=(10, 8), early_stop_patience=2)


def tiny_setup(seed=0, scenario="S2", **train_over):
    scfg = StreamConfig(**{**TINY_STREAM, "scenario": scenario, "seed": seed})
    ds = generate_synthetic_dataset(scfg)
    stream = build_stream(ds, scfg)
    test = build_test_set(ds, scfg)
    tcfg = TrainConfig(**{**TINY_TRAIN, "seed": seed, **train_over})
    return stream, test, tcfg


# -- adam ---------------------------------------------------------------------------


def test_adam_zero_grads_leave_fresh_params_unchanged():
    opt = AdamState()
    p = {"w": np.array([1.0, -2.0, 3.0])}
    before = p["w"].copy()
    adam_step(opt, p, {"w": np.zeros(3)}, lr=0.1)
    assert np.array_equal(p["w"], before)
    assert np.all(opt.m["w"] == 0.0) and np.all(opt.v["w"] == 0.0)


def test_adam_moments_decay_toward_zero_after_grads_stop():
    opt = AdamState()
    p = {"w": np.array([0.0])}
    adam_step(opt, p, {"w": np.array([1.0])}, lr=0.0)
    m1 = abs(opt.m["w"][0])
    for _ in range(10):
        adam_step(opt, p, {"w": np.zeros(1)}, lr=0.0)
    assert abs(opt.m["w"][0]) < m1


def test_adam_first_step_magnitude_is_lr():
    opt = AdamState()
    p = {"w": np.array([5.0])}
    adam_step(opt, p, {"w": np.array([1.0])}, lr=0.1)
    assert abs(abs(5.0 - p["w"][0]) - 0.1) < 1e-6


def test_adam_three_step_quadratic_matches_hand_trace():
    """Oracle: the update recurrence scripted independently on f(w) = 0.5 w^2."""
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    w_ref, m, v = 2.0, 0.0, 0.0
    trace = []
    for t in range(1, 4):
        g = w_ref  # d/dw of 0.5 w^2
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        w_ref = w_ref - lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(w_ref)

    opt = AdamState()
    p = {"w": np.array([2.0])}
    got = []
    for _ in range(3):
        adam_step(opt, p, {"w": p["w"].copy()}, lr=lr)
        got.append(p["w"][0])
    assert np.allclose(got, trace, atol=1e-10, rtol=0)


def test_adam_rejects_nonfinite_grads():
    with pytest.raises(NumericalError):
        adam_step(AdamState(), {"w": np.ones(2)}, {"w": np.array([1.0, np.nan])}, lr=0.1)


def test_adam_moment_padding_on_expansion():
    opt = AdamState()
    p = {"w": np.ones((2, 3))}
    adam_step(opt, p, {"w": np.full((2, 3), 0.5)}, lr=0.01)
    kept = opt.m["w"].copy()
    p = {"w": np.ones((2, 5))}
    adam_step(opt, p, {"w": np.zeros((2, 5))}, lr=0.01)
    assert opt.m["w"].shape == (2, 5)
    assert np.allclose(opt.m["w"][:, :3], kept * opt.beta1)


# -- schedule ---------------------------------------------------------------------------


def test_scheduler_published_values():
    lrs = [scheduler_lr(5e-4, e, 5, 0.5) for e in range(15)]
    assert lrs == [5e-4] * 5 + [2.5e-4] * 5 + [1.25e-4] * 5


def test_scheduler_floor_arithmetic():
    assert scheduler_lr(5e-4, 14, 5, 0.5) == 5e-4 * 0.25


# -- label space ------------------------------------------------------------------------


def test_label_space_mapping():
    space = LabelSpace([7, 3])
    space.extend([9])
    assert space.columns_for(np.array([3, 7, 9])).tolist() == [1, 0, 2]
    assert space.columns_for_optional(np.array([9, -1, 7])).tolist() == [2, -1, 0]
    with pytest.raises(ConfigError):
        space.extend([7])


# -- experience pipeline -----------------------------------------------------------------


class Recorder(TrainerHooks):
    def __init__(self):
        self.phases = []
        self.steps = []

    def on_phase(self, name, experience, **info):
        self.phases.append((experience, name, info))

    def on_step(self, experience, epoch, step, breakdown):
        self.steps.append((experience, epoch, step, breakdown))


def test_experience_zero_has_no_lwf_lfl():
    stream, test, tcfg = tiny_setup(seed=3)
    state = init_trainer(tcfg, stream[0].labeled_x.shape[1])
    rec = Recorder()
    train_experience(state, stream[0], tcfg, rec)
    assert rec.steps, "no training steps ran"
    assert all(b.lwf == 0.0 and b.lfl == 0.0 for (_, _, _, b) in rec.steps)


def test_later_experiences_have_regularizers_active():
    stream, test, tcfg = tiny_setup(seed=3)
    state = init_trainer(tcfg, stream[0].labeled_x.shape[1])
    rec = Recorder()
    train_experience(state, stream[0], tcfg)
    train_experience(state, stream[1], tcfg, rec)
    assert any(b.lwf > 0.0 for (_, _, _, b) in rec.steps)
    assert any(b.lfl > 0.0 for (_, _, _, b) in rec.steps)


def test_threshold_above_one_disables_pseudo_loss():
    stream, test, tcfg = tiny_setup(seed=4, pseudo_threshold=1.01)
    state = init_trainer(tcfg, stream[0].labeled_x.shape[1])
    rec = Recorder()
    for exp in stream:
        train_experience(state, exp, tcfg, rec)
    assert all(b.pseudo == 0.0 for (_, _, _, b) in rec.steps)
    pseudo_phases = [info for (_, name, info) in rec.phases if name == "pseudo_label"]
    assert all(p["assigned"] == 0 for p in pseudo_phases)


def test_phase_ordering_contract():
    stream, test, tcfg = tiny_setup(seed=5)
    state = init_trainer(tcfg, stream[0].labeled_x.shape[1])

    events = []

    class OrderHooks(TrainerHooks):
        def on_phase(self, name, experience, **info):
            events.append(name)

        def on_step(self, experience, epoch, step, breakdown):
            events.append("step")

    train_experience(state, stream[0], tcfg, OrderHooks())
    first_step = events.index("step")
    assert events[:3] == ["prototype_refresh", "head_expand", "pseudo_label"]
    assert all(e == "step" for e in events[first_step:-1])
    assert events[-1] == "snapshot"


def test_seen_classes_accumulate():
    stream, test, tcfg = tiny_setup(seed=6)
    state = init_trainer(tcfg, stream[0].labeled_x.shape[1])
    union = set()
    for exp in stream:
        train_experience(state, exp, tcfg)
        union |= set(exp.present_classes)
        assert state.seen_classes == union
        assert set(state.label_space.classes) == union


def test_early_stopping_restores_best_epoch():
    stream, test, tcfg = tiny_setup(seed=7, max_epochs=10)
    state = init_trainer(tcfg, stream[0].labeled_x.shape[1])
    records = train_experience(state, stream[0], tcfg)
    accs = [r.val_accuracy for r in records]
    best = max(accs)
    # re-evaluate the restored model on the same validation split
    from cirlab.metrics import evaluate
    from cirlab.trainer import _stratified_split

    _, val_idx = _stratified_split(stream[0].labeled_y, tcfg.val_fraction, tcfg.seed, 0)
    acc = evaluate(state.model, state.label_space.classes,
                   stream[0].labeled_x[val_idx], stream[0].labeled_y[val_idx])
    assert acc == best
    # patience: no more than patience non-improving epochs after the best one
    assert len(accs) <= accs.index(best) + 1 + tcfg.early_stop_patience


def test_epoch_lr_matches_scheduler():
    stream, test, tcfg = tiny_setup(seed=8, max_epochs=7, scheduler_step=2, scheduler_gamma=0.5)
    state = init_trainer(tcfg, stream[0].labeled_x.shape[1])
    records = train_experience(state, stream[0], tcfg)
    for r in records:
        assert r.lr == scheduler_lr(tcfg.lr, r.epoch, tcfg.scheduler_step, tcfg.scheduler_gamma)


def test_no_validation_split_trains_all_epochs():
    stream, test, tcfg = tiny_setup(seed=9, val_fraction=0.0, max_epochs=4)
    state = init_trainer(tcfg, stream[0].labeled_x.shape[1])
    records = train_experience(state, stream[0], tcfg)
    assert len(records) == 4
    assert all(r.val_accuracy is None for r in records)


# -- reduction to plain fine-tuning --------------------------------------------------------


def _params_bitwise_equal(a, b) -> bool:
    items_a, items_b = param_items(a), param_items(b)
    return all(
        na == nb and xa.shape == xb.shape and xa.tobytes() == xb.tobytes()
        for (na, xa), (nb, xb) in zip(items_a, items_b)
    )


def test_zero_weights_reduce_to_finetune_bitwise():
    stream, test, tcfg = tiny_setup(seed=10)
    zero = LossWeights(0.0, 0.0, 0.0, 0.0, 2.0)
    cfg_zero = TrainConfig(**{**TINY_TRAIN, "seed": 10, "weights": zero})
    method = run_stream(stream, test, cfg_zero, scenario="S2")
    baseline = run_finetune_baseline(stream, test, cfg_zero, scenario="S2")
    assert _params_bitwise_equal(method.state.model, baseline.state.model)
    assert method.report.accuracy_matrix == baseline.report.accuracy_matrix
    assert method.report.seen_accuracy == baseline.report.seen_accuracy


def test_nonzero_weights_diverge_from_finetune():
    stream, test, tcfg = tiny_setup(seed=10)
    method = run_stream(stream, test, tcfg, scenario="S2")
    baseline = run_finetune_baseline(stream, test, tcfg, scenario="S2")
    assert not _params_bitwise_equal(method.state.model, baseline.state.model)


# -- run_stream ------------------------------------------------------------------------------


def test_run_stream_report_shape_and_determinism():
    stream, test, tcfg = tiny_setup(seed=11)
    r1 = run_stream(stream, test, tcfg, scenario="S2")
    r2 = run_stream(stream, test, tcfg, scenario="S2")
    assert r1.report.to_json_bytes() == r2.report.to_json_bytes()
    n = len(stream)
    assert len(r1.report.accuracy_matrix) == n
    assert len(r1.report.seen_accuracy) == n
    assert r1.report.final_accuracy == r1.report.full_accuracy[-1]
    # matrix entries defined iff the cohort has been introduced
    keys = r1.report.cohort_keys()
    for t, row in enumerate(r1.report.accuracy_matrix):
        for j, k in enumerate(keys):
            assert (row[j] is None) == (k > t)
    # once every learnable class has appeared, seen-class accuracy IS full accuracy
    assert r1.state.seen_classes == set(test.class_ids)
    assert r1.report.seen_accuracy[-1] == r1.report.final_accuracy


def test_single_experience_stream_gives_one_by_one_matrix():
    scfg = StreamConfig(
        n_experiences=2, n_learnable=2, n_distractor=0, classes_per_exp=2,
        labeled_per_exp=12, unlabeled_per_exp=8, d_in=5, test_per_class=6, seed=12,
    )
    ds = generate_synthetic_dataset(scfg)
    stream = build_stream(ds, scfg)[:1]
    test = build_test_set(ds, scfg)
    tcfg = TrainConfig(**{**TINY_TRAIN, "seed": 12})
    result = run_stream(stream, test, tcfg, scenario="S1")
    assert len(result.report.accuracy_matrix) == 1
    assert len(result.report.accuracy_matrix[0]) == 1
    assert result.report.accuracy_matrix[0][0] is not None


def test_fixed_head_mode_never_expands():
    stream, test, _ = tiny_setup(seed=13)
    tcfg = TrainConfig(**{**TINY_TRAIN, "seed": 13, "fixed_head": True})
    result = run_stream(stream, test, tcfg, scenario="S2")
    assert result.state.model.n_classes == len(test.class_ids)
    assert result.state.label_space.classes == test.class_ids


def test_optimizer_persistence_switch():
    stream, test, _ = tiny_setup(seed=14)
    keep = run_stream(stream, test, TrainConfig(**{**TINY_TRAIN, "seed": 14}), scenario="S2")
    reset = run_stream(
        stream, test,
        TrainConfig(**{**TINY_TRAIN, "seed": 14, "reset_optimizer_each_exp": True}),
        scenario="S2",
    )
    last_exp_steps = sum(
        r.n_steps for r in reset.epoch_records if r.experience == len(stream) - 1
    )
    assert reset.state.optimizer.step_count == last_exp_steps
    assert keep.state.optimizer.step_count == sum(r.n_steps for r in keep.epoch_records)


def test_divergent_lr_raises_numerical_error():
    # one Adam step of ~1e160 per weight makes the next forward pass overflow
    stream, test, _ = tiny_setup(seed=15)
    tcfg = TrainConfig(**{**TINY_TRAIN, "seed": 15, "lr": 1e160})
    with np.errstate(invalid="ignore", over="ignore"), pytest.raises(NumericalError):
        run_stream(stream, test, tcfg, scenario="S2")


def test_trainer_checkpoint_roundtrip(tmp_path):
    stream, test, tcfg = tiny_setup(seed=16)
    result = run_stream(stream, test, tcfg, scenario="S2")
    path = tmp_path / "trainer.npz"
    save_trainer_checkpoint(path, result.state)
    loaded = load_trainer_checkpoint(path)
    assert _params_bitwise_equal(result.state.model, loaded.model)
    assert _params_bitwise_equal(result.state.old_model, loaded.old_model)
    assert loaded.label_space.classes == result.state.label_space.classes
    assert loaded.seen_classes == result.state.seen_classes
    assert loaded.experience_index == result.state.experience_index
    assert loaded.optimizer.step_count == result.state.optimizer.step_count
    for name, arr in result.state.optimizer.m.items():
        assert arr.tobytes() == loaded.optimizer.m[name].tobytes()
    for c, vec in result.state.buffer.entries.items():
        assert vec.tobytes() == loaded.buffer.entries[c].tobytes()


def test_empty_unlabeled_stream_still_trains():
    """Manifests may legally omit unlabeled records; only the labeled halves remain."""
    stream, test, tcfg = tiny_setup(seed=18)
    d = stream[0].labeled_x.shape[1]
    stripped = [
        type(exp)(
            index=exp.index,
            labeled_x=exp.labeled_x,
            labeled_y=exp.labeled_y,
            labeled_ids=exp.labeled_ids,
            unlabeled_x=np.zeros((0, d)),
            unlabeled_true=np.zeros(0, dtype=np.int64),
            unlabeled_ids=np.zeros(0, dtype=np.int64),
            present_classes=exp.present_classes,
        )
        for exp in stream[:2]
    ]
    rec = Recorder()
    result = run_stream(stripped, test, tcfg, scenario="S2", hooks=rec)
    later = [b for (e, _, _, b) in rec.steps if e == 1]
    assert later and any(b.lwf > 0 for b in later) and any(b.lfl > 0 for b in later)
    assert all(b.pseudo == 0.0 for (_, _, _, b) in rec.steps)
    assert np.isfinite(result.report.final_accuracy)


def test_pseudo_label_audit_never_touches_training():
    """Precision is logged from true labels, but training sees only pseudo-labels."""
    stream, test, tcfg = tiny_setup(seed=17)
    corrupted = [
        type(exp)(
            index=exp.index,
            labeled_x=exp.labeled_x,
            labeled_y=exp.labeled_y,
            labeled_ids=exp.labeled_ids,
            unlabeled_x=exp.unlabeled_x,
            unlabeled_true=np.zeros_like(exp.unlabeled_true),  # garbage audit labels
            unlabeled_ids=exp.unlabeled_ids,
            present_classes=exp.present_classes,
        )
        for exp in stream
    ]
    a = run_stream(stream, test, tcfg, scenario="S2")
    b = run_stream(corrupted, test, tcfg, scenario="S2")
    assert _params_bitwise_equal(a.state.model, b.state.model)
