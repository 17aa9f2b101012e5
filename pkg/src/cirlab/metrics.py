"""Accuracy evaluation, the per-cohort accuracy matrix, and report files.

A "cohort" is the set of classes first introduced at a given experience;
the accuracy matrix tracks each cohort's test accuracy after every later
experience, which is what makes forgetting visible.  Reports serialize to
a canonical JSON file (machine-readable, byte-reproducible) and a CSV
table (human-readable).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, EvaluationError
from .model import ModelState, forward_features, forward_logits
from .stream import Experience

REPORT_FORMAT = "cir-metrics"
REPORT_VERSION = 1


def predict_classes(state: ModelState, head_classes, features, batch_size: int = 256) -> np.ndarray:
    """Argmax class ids for a feature batch; ties resolve to the smallest class id."""
    head_classes = np.asarray(list(head_classes), dtype=np.int64)
    if head_classes.size != state.n_classes:
        raise EvaluationError(
            f"head maps {state.n_classes} columns but {head_classes.size} class ids were given"
        )
    if head_classes.size == 0:
        raise EvaluationError("model has no output classes yet")
    order = np.argsort(head_classes)
    sorted_ids = head_classes[order]
    features = np.asarray(features, dtype=np.float64)
    preds = np.empty(len(features), dtype=np.int64)
    for start in range(0, len(features), batch_size):
        chunk = features[start : start + batch_size]
        z = forward_logits(state, forward_features(state, chunk))
        preds[start : start + len(chunk)] = sorted_ids[np.argmax(z[:, order], axis=1)]
    return preds


def evaluate(
    state: ModelState,
    head_classes,
    features,
    labels,
    restrict_to=None,
    batch_size: int = 256,
) -> float:
    """Fraction of (optionally restricted) samples whose predicted class is correct.

    `head_classes[j]` names the class of head column j.  `restrict_to`
    keeps only test samples whose true label falls in the given set; the
    model still predicts over all its columns.  Batch size cannot change
    the result; the count of correct predictions is exact.
    """
    labels = np.asarray(labels, dtype=np.int64)
    features = np.asarray(features, dtype=np.float64)
    if restrict_to is not None:
        keep = np.isin(labels, np.asarray(sorted(restrict_to), dtype=np.int64))
        features, labels = features[keep], labels[keep]
    if labels.size == 0:
        raise EvaluationError("evaluation restriction selects no samples")
    preds = predict_classes(state, head_classes, features, batch_size)
    return int((preds == labels).sum()) / int(labels.size)


def cohorts_from_stream(stream: list[Experience]) -> dict[int, list[int]]:
    """Map first-appearance experience -> sorted class ids introduced there."""
    first: dict[int, int] = {}
    for exp in stream:
        for c in exp.present_classes:
            first.setdefault(c, exp.index)
    cohorts: dict[int, list[int]] = {}
    for c, t in first.items():
        cohorts.setdefault(t, []).append(c)
    return {t: sorted(cs) for t, cs in sorted(cohorts.items())}


@dataclass
class MetricsReport:
    """Full evaluation trace of one training run."""

    scenario: str
    seed: int
    cohorts: dict[int, list[int]]
    accuracy_matrix: list[list[float | None]]
    seen_accuracy: list[float]
    full_accuracy: list[float]
    final_accuracy: float
    label: str = ""

    def cohort_keys(self) -> list[int]:
        return sorted(self.cohorts)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "label": self.label,
            "scenario": self.scenario,
            "seed": self.seed,
            "cohorts": {str(k): v for k, v in sorted(self.cohorts.items())},
            "accuracy_matrix": self.accuracy_matrix,
            "seen_accuracy": self.seen_accuracy,
            "full_accuracy": self.full_accuracy,
            "final_accuracy": self.final_accuracy,
        }

    def to_json_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode() + b"\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        if d.get("format") != REPORT_FORMAT:
            raise ConfigError(f"not a {REPORT_FORMAT} file: format={d.get('format')!r}")
        if d.get("version") != REPORT_VERSION:
            raise ConfigError(f"unsupported {REPORT_FORMAT} version {d.get('version')!r}")
        return cls(
            scenario=d["scenario"],
            seed=d["seed"],
            cohorts={int(k): list(v) for k, v in d["cohorts"].items()},
            accuracy_matrix=[list(r) for r in d["accuracy_matrix"]],
            seen_accuracy=list(d["seen_accuracy"]),
            full_accuracy=list(d["full_accuracy"]),
            final_accuracy=d["final_accuracy"],
            label=d.get("label", ""),
        )

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, json_path, table_path=None) -> None:
        Path(json_path).write_bytes(self.to_json_bytes())
        if table_path is not None:
            Path(table_path).write_text(self.to_table_csv())

    def to_table_csv(self) -> str:
        """Human-readable delimiter-separated view of the same numbers."""
        keys = self.cohort_keys()
        lines = [
            f"format,{REPORT_FORMAT}",
            f"version,{REPORT_VERSION}",
            f"label,{self.label}",
            f"scenario,{self.scenario}",
            f"seed,{self.seed}",
            "",
            "after_exp," + ",".join(f"cohort{k}" for k in keys) + ",seen_classes,full_test",
        ]
        for t, row in enumerate(self.accuracy_matrix):
            cells = ["" if v is None else f"{v:.4f}" for v in row]
            lines.append(
                f"{t}," + ",".join(cells) + f",{self.seen_accuracy[t]:.4f},{self.full_accuracy[t]:.4f}"
            )
        lines.append("")
        lines.append(f"final_accuracy,{self.final_accuracy:.4f}")
        drops = forgetting_summary(self.accuracy_matrix)
        lines.append("cohort," + ",".join(str(k) for k in keys))
        lines.append("forgetting," + ",".join(f"{d:.4f}" for d in drops))
        return "\n".join(lines) + "\n"


def scenario_average(finals) -> float:
    """Arithmetic mean of per-scenario final accuracies."""
    finals = list(finals)
    if not finals:
        raise EvaluationError("scenario_average needs at least one value")
    return sum(float(v) for v in finals) / len(finals)


def forgetting_summary(accuracy_matrix) -> list[float]:
    """Per-cohort (max accuracy over time) - (final accuracy), column order."""
    if not accuracy_matrix:
        return []
    n_cols = len(accuracy_matrix[0])
    drops = []
    for j in range(n_cols):
        values = [row[j] for row in accuracy_matrix if row[j] is not None]
        drops.append(max(values) - values[-1] if values else 0.0)
    return drops


def mean_forgetting(accuracy_matrix) -> float:
    drops = forgetting_summary(accuracy_matrix)
    return sum(drops) / len(drops) if drops else 0.0
