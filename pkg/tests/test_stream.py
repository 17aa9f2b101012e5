"""Stream generator: determinism, balance, scenario containment, manifests."""

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from cirlab.errors import ConfigError, StreamGenerationError, StreamValidationError
from cirlab.stream import (
    StreamConfig,
    build_stream,
    build_test_set,
    generate_synthetic_dataset,
    ingest_directory,
    load_stream,
    make_dataset,
    materialize_stream,
    read_stream_manifest,
    stream_statistics,
    validate_stream,
    write_stream_manifest,
)

DESK = dict(
    n_experiences=6,
    n_learnable=5,
    n_distractor=2,
    classes_per_exp=2,
    labeled_per_exp=12,
    unlabeled_per_exp=20,
    d_in=8,
    test_per_class=6,
)


def desk_config(**over) -> StreamConfig:
    return StreamConfig(**{**DESK, **over})


# -- dataset ----------------------------------------------------------------------


def test_dataset_deterministic_and_sized():
    cfg = StreamConfig(
        n_experiences=3, n_learnable=2, n_distractor=0, classes_per_exp=1,
        labeled_per_exp=2, unlabeled_per_exp=4, d_in=4, train_pool_per_class=10,
        test_per_class=3, seed=7,
    )
    a = generate_synthetic_dataset(cfg)
    b = generate_synthetic_dataset(cfg)
    assert sum(len(p) for p in a.train_features) == 20
    for pa, pb in zip(a.train_features, b.train_features):
        assert pa.tobytes() == pb.tobytes()
    for pa, pb in zip(a.test_features, b.test_features):
        assert pa.tobytes() == pb.tobytes()


def test_zero_noise_collapses_to_class_mean():
    cfg = desk_config(noise_scale=0.0, seed=3)
    ds = generate_synthetic_dataset(cfg)
    for pool in ds.train_features:
        assert np.all(pool == pool[0])


def test_generator_produces_separable_classes():
    """Independent oracle: logistic regression must find the classes easily."""
    cfg = StreamConfig(
        n_experiences=11, n_learnable=10, n_distractor=0, classes_per_exp=1,
        labeled_per_exp=4, unlabeled_per_exp=4, d_in=16, seed=3,
        train_pool_per_class=30, test_per_class=20,
    )
    ds = generate_synthetic_dataset(cfg)
    x_train = np.concatenate(ds.train_features)
    y_train = np.concatenate([np.full(len(p), c) for c, p in enumerate(ds.train_features)])
    x_test = np.concatenate(ds.test_features)
    y_test = np.concatenate([np.full(len(p), c) for c, p in enumerate(ds.test_features)])
    clf = LogisticRegression(max_iter=2000).fit(x_train, y_train)
    assert clf.score(x_test, y_test) > 0.9


def test_invalid_configs_rejected():
    with pytest.raises(ConfigError):
        desk_config(d_in=0)
    with pytest.raises(ConfigError):
        desk_config(classes_per_exp=9)  # exceeds n_learnable
    with pytest.raises(ConfigError):
        desk_config(scenario="S9")
    with pytest.raises(ConfigError):
        # too few slots for coverage + repetition
        desk_config(n_experiences=2, classes_per_exp=2, n_learnable=5)


# -- stream construction ------------------------------------------------------------


@pytest.mark.parametrize("scenario", ["S1", "S2", "S3"])
def test_stream_invariants_validate(scenario):
    cfg = desk_config(scenario=scenario, seed=11)
    ds = generate_synthetic_dataset(cfg)
    stream = build_stream(ds, cfg)
    test = build_test_set(ds, cfg)
    validate_stream(stream, cfg, test)  # raises on any violation


def test_s1_unlabeled_support_equals_present():
    cfg = desk_config(scenario="S1", seed=5)
    ds = generate_synthetic_dataset(cfg)
    for exp in build_stream(ds, cfg):
        assert set(exp.unlabeled_true.tolist()) == set(exp.present_classes)


def test_s2_unlabeled_only_learnable_and_spans_future():
    cfg = desk_config(scenario="S2", seed=5)
    ds = generate_synthetic_dataset(cfg)
    stream = build_stream(ds, cfg)
    covered = {c for e in stream for c in e.present_classes}
    head = stream[0]
    assert set(head.unlabeled_true.tolist()) == covered  # includes future classes
    assert all(c < cfg.n_learnable for c in head.unlabeled_true)


def test_s3_includes_distractors():
    cfg = desk_config(scenario="S3", seed=5)
    ds = generate_synthetic_dataset(cfg)
    stream = build_stream(ds, cfg)
    distractors = set(cfg.distractor_ids)
    assert any(set(e.unlabeled_true.tolist()) & distractors for e in stream)
    # distractors never appear in labeled data
    assert all(not (set(e.labeled_y.tolist()) & distractors) for e in stream)


def test_labeled_ids_never_reused():
    cfg = desk_config(seed=9)
    ds = generate_synthetic_dataset(cfg)
    stream = build_stream(ds, cfg)
    all_ids = np.concatenate([e.labeled_ids for e in stream])
    assert len(np.unique(all_ids)) == len(all_ids)


def test_coverage_and_repetition():
    cfg = desk_config(seed=13)
    ds = generate_synthetic_dataset(cfg)
    stream = build_stream(ds, cfg)
    stats = stream_statistics(stream)
    assert set(stats.first_appearance) == set(range(cfg.n_learnable))
    assert any(n >= 2 for n in stats.repetition_counts.values())


def test_labeled_balance_within_one():
    cfg = desk_config(labeled_per_exp=13, seed=2)  # not divisible by classes_per_exp
    ds = generate_synthetic_dataset(cfg)
    for exp in build_stream(ds, cfg):
        _, counts = np.unique(exp.labeled_y, return_counts=True)
        assert counts.max() - counts.min() <= 1
        assert counts.sum() == 13


def test_exhausted_pool_names_class():
    cfg = desk_config(train_pool_per_class=8, seed=1)
    ds = generate_synthetic_dataset(cfg)
    with pytest.raises(StreamGenerationError, match=r"class \d+"):
        build_stream(ds, cfg)


def test_stream_deterministic():
    cfg = desk_config(seed=21)
    ds = generate_synthetic_dataset(cfg)
    s1 = build_stream(ds, cfg)
    s2 = build_stream(generate_synthetic_dataset(cfg), cfg)
    for a, b in zip(s1, s2):
        assert a.labeled_x.tobytes() == b.labeled_x.tobytes()
        assert np.array_equal(a.labeled_ids, b.labeled_ids)
        assert np.array_equal(a.unlabeled_ids, b.unlabeled_ids)
        assert a.present_classes == b.present_classes


# -- test set ------------------------------------------------------------------------


def test_test_set_learnable_only_balanced_disjoint():
    cfg = desk_config(seed=17)
    ds = generate_synthetic_dataset(cfg)
    stream = build_stream(ds, cfg)
    test = build_test_set(ds, cfg)
    assert set(test.labels.tolist()) == set(range(cfg.n_learnable))
    _, counts = np.unique(test.labels, return_counts=True)
    assert len(set(counts.tolist())) == 1
    train_ids = set()
    for e in stream:
        train_ids |= set(e.labeled_ids.tolist()) | set(e.unlabeled_ids.tolist())
    assert not (train_ids & set(test.ids.tolist()))


# -- statistics -------------------------------------------------------------------------


def test_statistics_contents():
    cfg = desk_config(scenario="S1", seed=23)
    ds = generate_synthetic_dataset(cfg)
    stream = build_stream(ds, cfg)
    stats = stream_statistics(stream)
    for exp in stream:
        assert set(stats.unlabeled_hist[exp.index]) == set(exp.present_classes)
    for c, n in stats.repetition_counts.items():
        assert n == sum(1 for e in stream if c in e.present_classes)
    total_labeled = sum(sum(h.values()) for h in stats.labeled_hist)
    assert total_labeled == cfg.n_experiences * cfg.labeled_per_exp
    assert any(stats.summary_lines())


# -- manifest io ---------------------------------------------------------------------------


def test_manifest_roundtrip_and_determinism(tmp_path):
    cfg = desk_config(scenario="S2", seed=31)
    ds = generate_synthetic_dataset(cfg)
    stream = build_stream(ds, cfg)
    p1, p2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
    write_stream_manifest(p1, stream, cfg)
    write_stream_manifest(p2, build_stream(generate_synthetic_dataset(cfg), cfg), cfg)
    assert p1.read_bytes() == p2.read_bytes()

    got_cfg, records = read_stream_manifest(p1)
    assert got_cfg == cfg
    rebuilt = materialize_stream(ds, got_cfg, records)
    for a, b in zip(stream, rebuilt):
        assert a.labeled_x.tobytes() == b.labeled_x.tobytes()
        assert np.array_equal(a.labeled_y, b.labeled_y)
        assert a.unlabeled_x.tobytes() == b.unlabeled_x.tobytes()
        assert np.array_equal(a.unlabeled_true, b.unlabeled_true)
        assert a.present_classes == b.present_classes


def test_load_stream_regenerates_dataset(tmp_path):
    cfg = desk_config(scenario="S3", seed=37)
    ds = generate_synthetic_dataset(cfg)
    stream = build_stream(ds, cfg)
    path = tmp_path / "s.tsv"
    write_stream_manifest(path, stream, cfg)
    got_cfg, rebuilt = load_stream(path)
    assert got_cfg == cfg
    assert rebuilt[0].labeled_x.tobytes() == stream[0].labeled_x.tobytes()


def test_manifest_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("not-a-manifest\n")
    with pytest.raises(ConfigError):
        read_stream_manifest(bad)


def test_validation_catches_tampering():
    cfg = desk_config(seed=41)
    ds = generate_synthetic_dataset(cfg)
    stream = build_stream(ds, cfg)
    stream[1].labeled_ids[:] = stream[0].labeled_ids[: len(stream[1].labeled_ids)]
    with pytest.raises(StreamValidationError, match="reused"):
        validate_stream(stream, cfg)


# -- ingestion ------------------------------------------------------------------------------


def _write_class_dir(root, name, vectors):
    d = root / name
    d.mkdir()
    for i, v in enumerate(vectors):
        np.save(d / f"sample_{i:03d}.npy", v)


def test_ingest_directory_npy(tmp_path, rng):
    for name in ("classA", "classB", "classC"):
        _write_class_dir(tmp_path, name, [rng.standard_normal(6) for _ in range(10)])
    ds = ingest_directory(tmp_path, test_fraction=0.2, seed=0)
    assert ds.n_classes == 3
    assert ds.d_in == 6
    assert ds.class_names == ["classA", "classB", "classC"]
    for tr, te in zip(ds.train_features, ds.test_features):
        assert len(tr) == 8 and len(te) == 2


def test_ingest_png(tmp_path, rng):
    import matplotlib.image as mpimg

    for name in ("c0", "c1"):
        d = tmp_path / name
        d.mkdir()
        for i in range(5):
            img = rng.random((4, 4, 3))
            mpimg.imsave(d / f"{i}.png", img)
    ds = ingest_directory(tmp_path, test_fraction=0.2, seed=0)
    assert ds.d_in == 16
    assert all(0.0 <= p.min() and p.max() <= 1.0 for p in ds.train_features)


def test_ingest_dimension_mismatch(tmp_path, rng):
    _write_class_dir(tmp_path, "a", [rng.standard_normal(4)])
    _write_class_dir(tmp_path, "b", [rng.standard_normal(5)])
    with pytest.raises(ConfigError, match="dimension"):
        ingest_directory(tmp_path)


def test_make_dataset_from_data_dir(tmp_path, rng):
    for name in ("c0", "c1", "c2"):
        _write_class_dir(tmp_path, name, [rng.standard_normal(4) for _ in range(30)])
    cfg = StreamConfig(
        n_experiences=4, n_learnable=2, n_distractor=1, classes_per_exp=1,
        labeled_per_exp=4, unlabeled_per_exp=6, d_in=4, test_per_class=3,
        data_dir=str(tmp_path), scenario="S3", seed=1,
    )
    ds = make_dataset(cfg)
    stream = build_stream(ds, cfg)
    test = build_test_set(ds, cfg)
    validate_stream(stream, cfg, test)
