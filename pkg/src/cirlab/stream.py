"""Deterministic class-incremental-with-repetition data streams.

A stream is a sequence of experiences, each pairing a small labeled batch
(balanced over a per-experience class subset) with a larger unlabeled batch
whose composition depends on the scenario:

  S1 — unlabeled samples come only from the experience's own classes;
  S2 — unlabeled samples come from every class the labeled stream ever shows;
  S3 — as S2, plus distractor classes that are never learnable.

Class ids below `n_learnable` are learnable, the next `n_distractor` ids are
distractors.  Labeled samples are never reused across experiences; the test
set is balanced over learnable classes and disjoint from all training data.
Everything is a pure function of (config, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import ConfigError, StreamGenerationError, StreamValidationError

SCENARIOS = ("S1", "S2", "S3")
MANIFEST_FORMAT = "cir-stream"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class StreamConfig:
    """Everything the generator needs; defaults are the desk-scale profile."""

    n_experiences: int = 10
    n_learnable: int = 10
    n_distractor: int = 3
    classes_per_exp: int = 3
    labeled_per_exp: int = 60
    unlabeled_per_exp: int = 120
    scenario: str = "S2"
    seed: int = 0
    d_in: int = 32
    noise_scale: float = 0.25
    train_pool_per_class: int | None = None
    test_per_class: int = 50
    data_dir: str | None = None
    ingest_test_fraction: float = 0.2

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        positive = {
            "n_experiences": self.n_experiences,
            "n_learnable": self.n_learnable,
            "classes_per_exp": self.classes_per_exp,
            "labeled_per_exp": self.labeled_per_exp,
            "unlabeled_per_exp": self.unlabeled_per_exp,
            "d_in": self.d_in,
            "test_per_class": self.test_per_class,
        }
        for name, value in positive.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.n_distractor < 0:
            raise ConfigError(f"n_distractor must be >= 0, got {self.n_distractor}")
        if self.noise_scale < 0:
            raise ConfigError(f"noise_scale must be >= 0, got {self.noise_scale}")
        if self.classes_per_exp > self.n_learnable:
            raise ConfigError(
                f"classes_per_exp ({self.classes_per_exp}) exceeds n_learnable ({self.n_learnable})"
            )
        if self.labeled_per_exp < self.classes_per_exp:
            raise ConfigError("labeled_per_exp must cover at least one sample per present class")
        if self.classes_per_exp * self.n_experiences <= self.n_learnable:
            raise ConfigError(
                "classes_per_exp * n_experiences must exceed n_learnable so every class "
                "appears and at least one class repeats"
            )
        if not 0 <= self.ingest_test_fraction < 1:
            raise ConfigError("ingest_test_fraction must lie in [0, 1)")

    @property
    def n_classes(self) -> int:
        return self.n_learnable + self.n_distractor

    @property
    def learnable_ids(self) -> range:
        return range(self.n_learnable)

    @property
    def distractor_ids(self) -> range:
        return range(self.n_learnable, self.n_classes)

    def resolved_train_pool(self) -> int:
        if self.train_pool_per_class is not None:
            if self.train_pool_per_class < 1:
                raise ConfigError("train_pool_per_class must be >= 1")
            return self.train_pool_per_class
        # worst case: a class appears in every experience with the largest share
        return self.n_experiences * math.ceil(self.labeled_per_exp / self.classes_per_exp)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StreamConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown stream config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Dataset:
    """Per-class sample pools, split into disjoint train and test partitions.

    Global sample ids are assigned contiguously: all train pools in class
    order, then all test pools.
    """

    train_features: list[np.ndarray]
    test_features: list[np.ndarray]
    d_in: int
    class_names: list[str] | None = None
    _train_offsets: np.ndarray = field(init=False, repr=False)
    _test_offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        train_sizes = [len(p) for p in self.train_features]
        test_sizes = [len(p) for p in self.test_features]
        self._train_offsets = np.concatenate([[0], np.cumsum(train_sizes)])
        self._test_offsets = self._train_offsets[-1] + np.concatenate([[0], np.cumsum(test_sizes)])

    @property
    def n_classes(self) -> int:
        return len(self.train_features)

    def train_ids(self, c: int) -> np.ndarray:
        return np.arange(self._train_offsets[c], self._train_offsets[c + 1], dtype=np.int64)

    def test_ids(self, c: int) -> np.ndarray:
        return np.arange(self._test_offsets[c], self._test_offsets[c + 1], dtype=np.int64)

    def class_of_id(self, sample_id: int) -> int:
        offsets = self._train_offsets if sample_id < self._train_offsets[-1] else self._test_offsets
        return int(np.searchsorted(offsets, sample_id, side="right") - 1)

    def features_by_id(self, ids: np.ndarray) -> np.ndarray:
        rows = np.concatenate(self.train_features + self.test_features, axis=0)
        return rows[np.asarray(ids, dtype=np.int64)]


@dataclass
class Experience:
    """One unit of the stream: aligned labeled and unlabeled batches.

    `unlabeled_true` is retained for audit statistics only and must never
    reach a training objective.
    """

    index: int
    labeled_x: np.ndarray
    labeled_y: np.ndarray
    labeled_ids: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_true: np.ndarray
    unlabeled_ids: np.ndarray
    present_classes: tuple[int, ...]


@dataclass
class TestSet:
    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray

    @property
    def class_ids(self) -> list[int]:
        return sorted(set(self.labels.tolist()))


def generate_synthetic_dataset(config: StreamConfig, seed: int | None = None) -> Dataset:
    """Gaussian class clusters in R^d_in: fixed random mean, isotropic noise.

    Identical (config, seed) pairs produce byte-identical pools; train and
    test partitions are drawn from independent noise streams.
    """
    seed = config.seed if seed is None else seed
    pool = config.resolved_train_pool()
    means = rng.stream(seed, rng.DATASET_MEANS).standard_normal((config.n_classes, config.d_in))
    train, test = [], []
    for c in range(config.n_classes):
        noise_tr = rng.stream(seed, rng.DATASET_TRAIN_NOISE, c).standard_normal((pool, config.d_in))
        noise_te = rng.stream(seed, rng.DATASET_TEST_NOISE, c).standard_normal(
            (config.test_per_class, config.d_in)
        )
        train.append(means[c] + config.noise_scale * noise_tr)
        test.append(means[c] + config.noise_scale * noise_te)
    return Dataset(train, test, config.d_in)


def _load_vector(path: Path) -> np.ndarray:
    suffix = path.suffix.lower()
    if suffix == ".npy":
        return np.asarray(np.load(path), dtype=np.float64).ravel()
    if suffix in (".csv", ".txt"):
        return np.loadtxt(path, delimiter="," if suffix == ".csv" else None, dtype=np.float64).ravel()
    if suffix in (".png", ".jpg", ".jpeg"):
        import matplotlib.image as mpimg

        img = np.asarray(mpimg.imread(path), dtype=np.float64)
        if img.max() > 1.0:  # integer-coded image; scale to [0, 1]
            img = img / 255.0
        if img.ndim == 3:
            img = img.mean(axis=2)
        return img.ravel()
    raise ConfigError(f"unsupported sample file type: {path.name}")


def ingest_directory(path, test_fraction: float = 0.2, seed: int = 0) -> Dataset:
    """Load a dataset from a directory with one subdirectory per class.

    Files may be .npy / .csv / .txt vectors or .png/.jpg images (flattened
    to grayscale in [0, 1]).  Each class is split train/test by a seeded
    permutation.  Class ids follow the sorted subdirectory names.
    """
    root = Path(path)
    if not root.is_dir():
        raise ConfigError(f"dataset directory not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ConfigError(f"no class subdirectories under {root}")
    train, test, names = [], [], []
    d_in = None
    for c, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.is_file())
        if not files:
            raise ConfigError(f"class directory {cdir.name!r} contains no samples")
        vectors = []
        for f in files:
            v = _load_vector(f)
            if d_in is None:
                d_in = v.size
            elif v.size != d_in:
                raise ConfigError(
                    f"sample {f} has dimension {v.size}, expected {d_in} (all samples must match)"
                )
            vectors.append(v)
        mat = np.stack(vectors)
        n_test = int(len(files) * test_fraction)
        perm = rng.stream(seed, rng.INGEST_SPLIT, c).permutation(len(files))
        test_idx = np.sort(perm[:n_test])
        train_idx = np.sort(perm[n_test:])
        train.append(mat[train_idx])
        test.append(mat[test_idx])
        names.append(cdir.name)
    return Dataset(train, test, int(d_in), class_names=names)


def make_dataset(config: StreamConfig) -> Dataset:
    """Dispatch to ingestion when `data_dir` is set, else the synthetic generator."""
    if config.data_dir is not None:
        ds = ingest_directory(config.data_dir, config.ingest_test_fraction, config.seed)
        if ds.n_classes < config.n_classes:
            raise ConfigError(
                f"{config.data_dir} provides {ds.n_classes} classes; config needs "
                f"{config.n_learnable}+{config.n_distractor}"
            )
        if ds.d_in != config.d_in:
            raise ConfigError(f"ingested dimension {ds.d_in} != configured d_in {config.d_in}")
        return ds
    return generate_synthetic_dataset(config)


# -- stream construction --------------------------------------------------------


def _assign_classes(config: StreamConfig) -> list[list[int]]:
    """Class subset per experience: uniform draws plus a coverage fix-up.

    Uncovered learnable classes displace (at the earliest experiences) classes
    that appear more than once, so every learnable class appears at least once.
    """
    r = rng.stream(config.seed, rng.CLASS_ASSIGN)
    draws = [
        sorted(r.choice(config.n_learnable, size=config.classes_per_exp, replace=False).tolist())
        for _ in range(config.n_experiences)
    ]
    counts: dict[int, int] = {}
    for d in draws:
        for c in d:
            counts[c] = counts.get(c, 0) + 1
    uncovered = [c for c in range(config.n_learnable) if c not in counts]
    for c in uncovered:
        placed = False
        for t in range(config.n_experiences):
            # displace the most-repeated class in this experience, if any
            donors = [d for d in draws[t] if counts[d] >= 2]
            if not donors:
                continue
            donor = max(donors, key=lambda d: (counts[d], -d))
            draws[t][draws[t].index(donor)] = c
            draws[t].sort()
            counts[donor] -= 1
            counts[c] = 1
            placed = True
            break
        if not placed:
            raise StreamGenerationError(f"cannot cover class {c}: no repeated class to displace")
    return draws


def _balanced_counts(total: int, classes: list[int]) -> dict[int, int]:
    """Split `total` samples over `classes` with per-class counts differing by <= 1."""
    base, rem = divmod(total, len(classes))
    return {c: base + (1 if i < rem else 0) for i, c in enumerate(sorted(classes))}


def _permitted_unlabeled(config: StreamConfig, draws: list[list[int]], t: int) -> list[int]:
    if config.scenario == "S1":
        return sorted(draws[t])
    covered = sorted({c for d in draws for c in d})
    if config.scenario == "S2":
        return covered
    return covered + list(config.distractor_ids)


def build_stream(dataset: Dataset, config: StreamConfig) -> list[Experience]:
    """Materialize all experiences for the configured scenario.

    Labeled samples are consumed from per-class pools without replacement
    across the whole stream; unlabeled samples are free draws from the train
    partition of whichever classes the scenario permits.
    """
    if dataset.n_classes < config.n_classes:
        raise ConfigError(
            f"dataset has {dataset.n_classes} classes, config needs {config.n_classes}"
        )
    draws = _assign_classes(config)
    if not any(n >= 2 for n in _appearance_counts(draws).values()):
        raise StreamGenerationError(
            "no class repeats across experiences; increase n_experiences or classes_per_exp"
        )
    cursors = {c: 0 for c in range(config.n_classes)}
    perms = {
        c: rng.stream(config.seed, rng.LABELED_PERM, c).permutation(len(dataset.train_features[c]))
        for c in range(config.n_classes)
    }
    experiences = []
    for t in range(config.n_experiences):
        lab_counts = _balanced_counts(config.labeled_per_exp, draws[t])
        lx, ly, lids = [], [], []
        for c in sorted(lab_counts):
            need = lab_counts[c]
            start = cursors[c]
            if start + need > len(perms[c]):
                raise StreamGenerationError(
                    f"labeled pool for class {c} exhausted at experience {t} "
                    f"(need {need}, have {len(perms[c]) - start}); enlarge train_pool_per_class"
                )
            rows = perms[c][start : start + need]
            cursors[c] = start + need
            lx.append(dataset.train_features[c][rows])
            ly.append(np.full(need, c, dtype=np.int64))
            lids.append(dataset.train_ids(c)[rows])
        permitted = _permitted_unlabeled(config, draws, t)
        unl_counts = _balanced_counts(config.unlabeled_per_exp, permitted)
        u_rng = rng.stream(config.seed, rng.UNLABELED_DRAW, t)
        ux, utrue, uids = [], [], []
        for c in sorted(unl_counts):
            need = unl_counts[c]
            if need == 0:
                continue
            pool = len(dataset.train_features[c])
            rows = u_rng.choice(pool, size=need, replace=need > pool)
            ux.append(dataset.train_features[c][rows])
            utrue.append(np.full(need, c, dtype=np.int64))
            uids.append(dataset.train_ids(c)[rows])
        experiences.append(
            Experience(
                index=t,
                labeled_x=np.concatenate(lx),
                labeled_y=np.concatenate(ly),
                labeled_ids=np.concatenate(lids),
                unlabeled_x=np.concatenate(ux),
                unlabeled_true=np.concatenate(utrue),
                unlabeled_ids=np.concatenate(uids),
                present_classes=tuple(sorted(draws[t])),
            )
        )
    return experiences


def _appearance_counts(draws: list[list[int]]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for d in draws:
        for c in d:
            counts[c] = counts.get(c, 0) + 1
    return counts


def build_test_set(dataset: Dataset, config: StreamConfig) -> TestSet:
    """Balanced held-out set over learnable classes only."""
    feats, labels, ids = [], [], []
    for c in config.learnable_ids:
        pool = dataset.test_features[c]
        if len(pool) < config.test_per_class:
            raise StreamGenerationError(
                f"test pool for class {c} has {len(pool)} samples, need {config.test_per_class}"
            )
        feats.append(pool[: config.test_per_class])
        labels.append(np.full(config.test_per_class, c, dtype=np.int64))
        ids.append(dataset.test_ids(c)[: config.test_per_class])
    return TestSet(np.concatenate(feats), np.concatenate(labels), np.concatenate(ids))


# -- statistics and validation ------------------------------------------------------


@dataclass
class StreamStats:
    n_experiences: int
    first_appearance: dict[int, int]
    repetition_counts: dict[int, int]
    labeled_hist: list[dict[int, int]]
    unlabeled_hist: list[dict[int, int]]

    def summary_lines(self) -> list[str]:
        lines = [f"experiences: {self.n_experiences}"]
        lines.append(f"classes in labeled stream: {len(self.first_appearance)}")
        repeated = sum(1 for n in self.repetition_counts.values() if n >= 2)
        lines.append(f"classes appearing in >=2 experiences: {repeated}")
        for t in range(self.n_experiences):
            lab = ",".join(str(c) for c in sorted(self.labeled_hist[t]))
            unl = ",".join(str(c) for c in sorted(self.unlabeled_hist[t]))
            lines.append(f"exp {t}: labeled classes [{lab}] unlabeled true classes [{unl}]")
        return lines


def _histogram(values: np.ndarray) -> dict[int, int]:
    ids, counts = np.unique(np.asarray(values, dtype=np.int64), return_counts=True)
    return {int(c): int(n) for c, n in zip(ids, counts)}


def stream_statistics(stream: list[Experience]) -> StreamStats:
    """Audit-level composition summary; uses true labels of the unlabeled stream."""
    first: dict[int, int] = {}
    reps: dict[int, int] = {}
    lab_h, unl_h = [], []
    for exp in stream:
        for c in exp.present_classes:
            first.setdefault(c, exp.index)
            reps[c] = reps.get(c, 0) + 1
        lab_h.append(_histogram(exp.labeled_y))
        unl_h.append(_histogram(exp.unlabeled_true))
    return StreamStats(len(stream), first, reps, lab_h, unl_h)


def validate_stream(
    stream: list[Experience], config: StreamConfig, test: TestSet | None = None
) -> StreamStats:
    """Check every stream invariant; raises StreamValidationError listing violations."""
    issues = []
    learnable = set(config.learnable_ids)
    covered = {c for exp in stream for c in exp.present_classes}
    permitted_s2 = covered
    seen_labeled_ids: set[int] = set()
    stream_ids: set[int] = set()
    for exp in stream:
        t = exp.index
        if len(exp.labeled_y) != config.labeled_per_exp:
            issues.append(f"exp {t}: {len(exp.labeled_y)} labeled samples, expected {config.labeled_per_exp}")
        if len(exp.unlabeled_true) != config.unlabeled_per_exp:
            issues.append(f"exp {t}: {len(exp.unlabeled_true)} unlabeled samples, expected {config.unlabeled_per_exp}")
        present = set(exp.present_classes)
        if not present <= learnable:
            issues.append(f"exp {t}: present classes {sorted(present - learnable)} are not learnable")
        hist = _histogram(exp.labeled_y)
        if set(hist) != present:
            issues.append(f"exp {t}: labeled classes {sorted(hist)} != present {sorted(present)}")
        elif hist and max(hist.values()) - min(hist.values()) > 1:
            issues.append(f"exp {t}: labeled class counts unbalanced: {hist}")
        if config.scenario == "S1":
            allowed = present
        elif config.scenario == "S2":
            allowed = permitted_s2
        else:
            allowed = permitted_s2 | set(config.distractor_ids)
        stray = set(exp.unlabeled_true.tolist()) - allowed
        if stray:
            issues.append(f"exp {t}: unlabeled true labels {sorted(stray)} outside {config.scenario} rules")
        dup = seen_labeled_ids & set(exp.labeled_ids.tolist())
        if dup:
            issues.append(f"exp {t}: labeled sample ids reused: {sorted(dup)[:5]}...")
        seen_labeled_ids |= set(exp.labeled_ids.tolist())
        stream_ids |= set(exp.labeled_ids.tolist()) | set(exp.unlabeled_ids.tolist())
    if covered != learnable:
        issues.append(f"learnable classes never appearing: {sorted(learnable - covered)}")
    stats = stream_statistics(stream)
    if not any(n >= 2 for n in stats.repetition_counts.values()):
        issues.append("no class appears in more than one experience (repetition required)")
    if test is not None:
        if set(test.labels.tolist()) - learnable:
            issues.append("test set contains non-learnable classes")
        counts = _histogram(test.labels)
        if len(set(counts.values())) > 1:
            issues.append(f"test set unbalanced: {counts}")
        overlap = stream_ids & set(test.ids.tolist())
        if overlap:
            issues.append(f"test samples overlap the training stream: {sorted(overlap)[:5]}...")
    if issues:
        raise StreamValidationError(issues)
    return stats


# -- manifest io -----------------------------------------------------------------


def config_json(config: StreamConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))


def write_stream_manifest(path, stream: list[Experience], config: StreamConfig) -> None:
    """One header line, one embedded config line, then one record per sample."""
    lines = [
        f"{MANIFEST_FORMAT}\tv{MANIFEST_VERSION}\tseed={config.seed}\tscenario={config.scenario}",
        "config\t" + config_json(config),
    ]
    for exp in stream:
        for sid, y in zip(exp.labeled_ids, exp.labeled_y):
            lines.append(f"{exp.index}\tL\t{sid}\t{y}\t{y}")
        for sid, y in zip(exp.unlabeled_ids, exp.unlabeled_true):
            lines.append(f"{exp.index}\tU\t{sid}\t{y}\t-")
    Path(path).write_text("\n".join(lines) + "\n")


def read_stream_manifest(path) -> tuple[StreamConfig, list[tuple[int, str, int, int]]]:
    """Parse a manifest into its embedded config and (exp, split, id, true) records."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(MANIFEST_FORMAT + "\t"):
        raise ConfigError(f"{path}: not a {MANIFEST_FORMAT} manifest")
    header = lines[0].split("\t")
    if header[1] != f"v{MANIFEST_VERSION}":
        raise ConfigError(f"{path}: unsupported manifest version {header[1]}")
    if len(lines) < 2 or not lines[1].startswith("config\t"):
        raise ConfigError(f"{path}: missing embedded config line")
    config = StreamConfig.from_dict(json.loads(lines[1].split("\t", 1)[1]))
    records = []
    for ln in lines[2:]:
        if not ln.strip():
            continue
        t, split, sid, true, exposed = ln.split("\t")
        if split == "L" and exposed != true:
            raise StreamValidationError([f"labeled sample {sid}: exposed label {exposed} != true {true}"])
        records.append((int(t), split, int(sid), int(true)))
    return config, records


def materialize_stream(dataset: Dataset, config: StreamConfig, records) -> list[Experience]:
    """Rebuild experiences from manifest records against a regenerated dataset."""
    by_exp: dict[int, dict[str, list[tuple[int, int]]]] = {}
    for t, split, sid, true in records:
        if dataset.class_of_id(sid) != true:
            raise StreamValidationError([f"sample {sid}: manifest says class {true}, dataset says {dataset.class_of_id(sid)}"])
        by_exp.setdefault(t, {"L": [], "U": []})[split].append((sid, true))
    experiences = []
    for t in sorted(by_exp):
        lab = by_exp[t]["L"]
        unl = by_exp[t]["U"]
        lids = np.array([s for s, _ in lab], dtype=np.int64)
        ly = np.array([y for _, y in lab], dtype=np.int64)
        uids = np.array([s for s, _ in unl], dtype=np.int64)
        uy = np.array([y for _, y in unl], dtype=np.int64)
        experiences.append(
            Experience(
                index=t,
                labeled_x=dataset.features_by_id(lids),
                labeled_y=ly,
                labeled_ids=lids,
                unlabeled_x=dataset.features_by_id(uids),
                unlabeled_true=uy,
                unlabeled_ids=uids,
                present_classes=tuple(sorted(set(ly.tolist()))),
            )
        )
    return experiences


def load_stream(path, dataset: Dataset | None = None) -> tuple[StreamConfig, list[Experience]]:
    """Read a manifest and materialize its stream (regenerating the dataset if needed)."""
    config, records = read_stream_manifest(path)
    if dataset is None:
        dataset = make_dataset(config)
    return config, materialize_stream(dataset, config, records)
