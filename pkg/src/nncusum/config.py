"""Experiment configuration: a YAML key tree with validation and round-trip."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .datagen import PRESETS
from .neural import LossKind


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


NETWORK_DEFAULTS: dict[str, Any] = {
    "window_length": 200,
    "split_ratio": 0.5,
    "stride": 10,
    "train_every": 1,
    "burn_in": 5000,
    "hidden_width": 64,
    "learning_rate": 1e-3,
    "batch_size": 100,
    "loss": "logistic",
    "mode": "continual",
    "epochs": 1,
    "reference_draws": "disjoint",
}

DETECTOR_DEFAULTS: dict[str, dict[str, Any]] = {
    "nn_cusum": {**NETWORK_DEFAULTS, "drift": "estimate"},
    "onnc": dict(NETWORK_DEFAULTS),
    "onnr": {**NETWORK_DEFAULTS, "onnr_weight": 0.5},
    "exact_cusum": {},
    "hotelling_cusum": {"regularizer": None, "epsilon": None, "holdout": 0.5},
    "mewma": {"decay": 0.1, "regularizer": None},
    "wl_cusum": {"window": 200, "regularizer": None},
    "wl_glr": {"window": 200, "regularizer": None},
}
DETECTOR_KINDS = tuple(DETECTOR_DEFAULTS)


@dataclass
class DetectorConfig:
    name: str
    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in DETECTOR_DEFAULTS:
            raise ConfigError(f"detector {self.name!r}: unknown kind {self.kind!r}; choose from {DETECTOR_KINDS}")
        unknown = set(self.params) - set(DETECTOR_DEFAULTS[self.kind])
        if unknown:
            raise ConfigError(f"detector {self.name!r}: unknown parameters {sorted(unknown)}")
        self._validate(self.resolved())

    def resolved(self) -> dict[str, Any]:
        return {**DETECTOR_DEFAULTS[self.kind], **self.params}

    def _validate(self, p: dict[str, Any]) -> None:
        def positive(key, integer=True):
            v = p[key]
            ok = isinstance(v, int) and not isinstance(v, bool) if integer else isinstance(v, (int, float))
            if not ok or v <= 0:
                raise ConfigError(f"detector {self.name!r}: {key} must be a positive {'integer' if integer else 'number'}")

        if self.kind in ("nn_cusum", "onnc", "onnr"):
            for key in ("window_length", "stride", "train_every", "hidden_width", "batch_size", "epochs"):
                positive(key)
            if not isinstance(p["burn_in"], int) or p["burn_in"] < 0:
                raise ConfigError(f"detector {self.name!r}: burn_in must be a nonnegative integer")
            if not 0 < p["split_ratio"] < 1:
                raise ConfigError(f"detector {self.name!r}: split_ratio must lie in (0, 1)")
            if not isinstance(p["learning_rate"], (int, float)) or p["learning_rate"] < 0:
                raise ConfigError(f"detector {self.name!r}: learning_rate must be nonnegative")
            if p["loss"] not in [k.value for k in LossKind]:
                raise ConfigError(f"detector {self.name!r}: unknown loss {p['loss']!r}")
            if p["mode"] not in ("continual", "scratch"):
                raise ConfigError(f"detector {self.name!r}: mode must be continual or scratch")
            if p["reference_draws"] not in ("disjoint", "shared"):
                raise ConfigError(f"detector {self.name!r}: reference_draws must be disjoint or shared")
        if self.kind == "nn_cusum":
            drift = p["drift"]
            if drift != "estimate" and not (isinstance(drift, (int, float)) and math.isfinite(drift)):
                raise ConfigError(f"detector {self.name!r}: drift must be a number or 'estimate'")
        if self.kind == "onnr" and not 0 < p["onnr_weight"] < 1:
            raise ConfigError(f"detector {self.name!r}: onnr_weight must lie in (0, 1)")
        if self.kind == "mewma" and not 0 < p["decay"] <= 1:
            raise ConfigError(f"detector {self.name!r}: decay must lie in (0, 1]")
        if self.kind in ("wl_cusum", "wl_glr"):
            positive("window")
        if self.kind == "hotelling_cusum" and not 0 < p["holdout"] < 1:
            raise ConfigError(f"detector {self.name!r}: holdout must lie in (0, 1)")


@dataclass
class ExampleConfig:
    name: str
    preset: str | None = None
    dim: int = 100
    overrides: dict[str, Any] = field(default_factory=dict)
    csv: str | None = None
    feature_columns: list[str] | None = None
    label_column: str | None = "label"
    background_label: int = 0
    target_label: int = 1

    def __post_init__(self) -> None:
        if (self.preset is None) == (self.csv is None):
            raise ConfigError(f"example {self.name!r}: give exactly one of preset or csv")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"example {self.name!r}: unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ConfigError(f"example {self.name!r}: dim must be a positive integer")


@dataclass
class CampaignConfig:
    change_point: int = 500
    horizon: int = 5500
    n_sequences: int = 50
    calibration_sequences: int | None = None
    calibration_horizon: int | None = None
    target_arl: float | None = 5000.0
    target_type1: float | None = None
    tolerance: float = 0.1
    reference_size: int = 20000
    drift_sequences: int = 10
    drift_length: int | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0 <= self.change_point < self.horizon:
            raise ConfigError("campaign: need 0 <= change_point < horizon")
        for key in ("n_sequences", "reference_size", "drift_sequences", "workers"):
            v = getattr(self, key)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"campaign: {key} must be a positive integer")
        if (self.target_arl is None) == (self.target_type1 is None):
            raise ConfigError("campaign: set exactly one of target_arl and target_type1")
        if self.target_arl is not None and self.target_arl <= 0:
            raise ConfigError("campaign: target_arl must be positive")
        if self.target_type1 is not None and not 0 < self.target_type1 < 1:
            raise ConfigError("campaign: target_type1 must lie in (0, 1)")
        if not 0 < self.tolerance < 1:
            raise ConfigError("campaign: tolerance must lie in (0, 1)")
        for key in ("calibration_sequences", "calibration_horizon", "drift_length"):
            v = getattr(self, key)
            if v is not None and (not isinstance(v, int) or v < 1):
                raise ConfigError(f"campaign: {key} must be a positive integer")

    @property
    def n_calibration(self) -> int:
        return self.calibration_sequences or self.n_sequences

    @property
    def cal_horizon(self) -> int:
        return self.calibration_horizon or self.horizon


@dataclass
class ExperimentConfig:
    master_seed: int = 0
    output_dir: str = "results"
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    detectors: list[DetectorConfig] = field(default_factory=list)
    examples: list[ExampleConfig] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigError("master_seed must be a nonnegative integer")
        for label, items in (("detector", self.detectors), ("example", self.examples)):
            names = [item.name for item in items]
            if len(names) != len(set(names)):
                raise ConfigError(f"duplicate {label} names in {names}")

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> ExperimentConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        raw = copy.deepcopy(raw)
        known = {"master_seed", "output_dir", "campaign", "detectors", "examples"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        try:
            block = dict(raw.get("campaign") or {})
            if block.get("target_type1") is not None and "target_arl" not in block:
                # a Type-I target replaces the default ARL target
                block["target_arl"] = None
            campaign = CampaignConfig(**block)
            detectors = [DetectorConfig(d["name"], d["kind"], d.get("params") or {}) for d in raw.get("detectors") or []]
            examples = [ExampleConfig(**e) for e in raw.get("examples") or []]
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls(raw.get("master_seed", 0), raw.get("output_dir", "results"), campaign, detectors, examples)

    def to_dict(self) -> dict[str, Any]:
        return {
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "campaign": asdict(self.campaign),
            "detectors": [{"name": d.name, "kind": d.kind, "params": dict(d.params)} for d in self.detectors],
            "examples": [asdict(e) for e in self.examples],
        }

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        return cls.from_dict(raw or {})

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def detector(self, name: str) -> DetectorConfig:
        for d in self.detectors:
            if d.name == name:
                return d
        raise ConfigError(f"no detector named {name!r}")

    def example(self, name: str) -> ExampleConfig:
        for e in self.examples:
            if e.name == name:
                return e
        raise ConfigError(f"no example named {name!r}")


def cell_fingerprint(config: ExperimentConfig, detector: DetectorConfig, example: ExampleConfig) -> str:
    """Hash of everything that determines one cell's numbers."""
    payload = {
        "seed": config.master_seed,
        "campaign": asdict(config.campaign) | {"workers": None},
        "detector": {"kind": detector.kind, "params": detector.resolved()},
        "example": asdict(example),
    }
    blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
