"""Experiment configuration files and run manifests.

A config file is JSON with optional "stream" and "train" sections; omitted
keys take package defaults.  A run manifest snapshots the fully resolved
config (every default made explicit) plus artifact paths, so any run can be
reproduced from the manifest alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .stream import StreamConfig
from .trainer import TrainConfig

RUN_MANIFEST_FORMAT = "cir-run-manifest"
RUN_MANIFEST_VERSION = 1


@dataclass
class ExperimentConfig:
    stream: StreamConfig
    train: TrainConfig

    def to_dict(self) -> dict:
        return {"stream": self.stream.to_dict(), "train": self.train.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {"stream", "train"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            return cls(
                stream=StreamConfig.from_dict(d.get("stream", {})),
                train=TrainConfig.from_dict(d.get("train", {})),
            )
        except TypeError as e:
            raise ConfigError(str(e)) from e


def load_config_dict(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return d


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw  # bare strings (e.g. scenario=S2) are fine unquoted


def apply_overrides(config_dict: dict, overrides) -> dict:
    """Apply dotted-key=value settings, e.g. train.lr=1e-3 or stream.scenario=S3."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form dotted.key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        if len(keys) < 2 or keys[0] not in ("stream", "train"):
            raise ConfigError(f"override key {dotted!r} must start with 'stream.' or 'train.'")
        node = config_dict
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override key {dotted!r} descends into a non-object")
        node[keys[-1]] = _parse_value(raw)
    return config_dict


def resolve_config(
    path=None, overrides=(), seed=None, scenario=None, stream_base: StreamConfig | None = None
) -> ExperimentConfig:
    """File (or defaults) -> overrides -> convenience seed/scenario flags.

    `stream_base` (e.g. the config embedded in a stream manifest) supplies
    stream-section defaults that explicit settings overlay.
    """
    d = load_config_dict(path) if path else {}
    d.setdefault("stream", {})
    d.setdefault("train", {})
    if stream_base is not None:
        d["stream"] = {**stream_base.to_dict(), **d["stream"]}
    apply_overrides(d, overrides)
    if seed is not None:
        d["stream"]["seed"] = seed
        d["train"]["seed"] = seed
    if scenario is not None:
        d["stream"]["scenario"] = scenario
    return ExperimentConfig.from_dict(d)


@dataclass
class RunManifest:
    """Self-contained description of a training run."""

    config: ExperimentConfig
    artifacts: dict[str, str]
    label: str = "method"
    baseline: bool = False
    zero_weights: bool = False

    def to_dict(self) -> dict:
        return {
            "format": RUN_MANIFEST_FORMAT,
            "version": RUN_MANIFEST_VERSION,
            "label": self.label,
            "baseline": self.baseline,
            "zero_weights": self.zero_weights,
            "config": self.config.to_dict(),
            "artifacts": dict(sorted(self.artifacts.items())),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        d = load_config_dict(path)
        if d.get("format") != RUN_MANIFEST_FORMAT:
            raise ConfigError(f"{path}: not a {RUN_MANIFEST_FORMAT} file")
        if d.get("version") != RUN_MANIFEST_VERSION:
            raise ConfigError(f"{path}: unsupported manifest version {d.get('version')!r}")
        return cls(
            config=ExperimentConfig.from_dict(d["config"]),
            artifacts=d.get("artifacts", {}),
            label=d.get("label", "method"),
            baseline=d.get("baseline", False),
            zero_weights=d.get("zero_weights", False),
        )
