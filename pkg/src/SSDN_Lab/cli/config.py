"""
Experiment configuration: a YAML document parsed into frozen dataclasses.

Every section rejects unknown keys and reports the dotted location of the
offending entry, e.g. ``bridge.brigde_g1: unknown key``.
"""
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, Union

import yaml

from ..errors import ConfigError, ContractViolation
from ..nn import ArchConfig
from ..regimes import RegimeKind, TrainConfig, TTTConfig
from ..shifts import CorruptionSpec, SyntheticSpec
from ..ssdn import BridgeConfig

KINDS = ("train", "eval", "sensitivity", "ablation", "alphas")
SOURCES = ("synthetic", "cifar10", "mnist")
PATH_KEYS = {
    "synthetic": (),
    "cifar10": ("train", "test"),
    "mnist": ("train_images", "train_labels", "test_images", "test_labels"),
}
# a target set is test-only
TARGET_PATH_KEYS = {
    "cifar10": ("test",),
    "mnist": ("test_images", "test_labels"),
}


@dataclass(frozen=True)
class TargetConfig:
    """Covariate-shifted test set from another source, evaluated as one more shift"""

    source: str = "mnist"
    paths: Tuple[Tuple[str, str], ...] = ()  # sorted (key, path) pairs
    name: str = "target"

    @property
    def path_map(self) -> Dict[str, str]:
        return dict(self.paths)

    def to_dict(self) -> Dict[str, Any]:
        return {"source": self.source, "paths": self.path_map, "name": self.name}


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"
    synthetic: SyntheticSpec = SyntheticSpec()
    test_samples_per_class: int = 250
    train_seed_offset: int = 0
    test_seed_offset: int = 1000
    paths: Tuple[Tuple[str, str], ...] = ()  # sorted (key, path) pairs
    target: Optional[TargetConfig] = None

    @property
    def path_map(self) -> Dict[str, str]:
        return dict(self.paths)


@dataclass(frozen=True)
class AnalysisConfig:
    blocks: Tuple[str, ...] = ("G1", "G2", "G3", "G4")
    tune_steps: int = 500
    tune_lr: float = 0.001
    tune_momentum: float = 0.9
    probe_size: int = 256
    per_layer: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "eval"
    arch: ArchConfig = ArchConfig()
    bridge: BridgeConfig = BridgeConfig()
    regime: RegimeKind = RegimeKind.JOINT_TRAINING
    train: TrainConfig = TrainConfig()
    epochs: int = 10
    ttt: TTTConfig = TTTConfig()
    dataset: DatasetConfig = DatasetConfig()
    corruptions: Tuple[CorruptionSpec, ...] = ()
    seeds: Tuple[int, ...] = (0,)
    analysis: AnalysisConfig = AnalysisConfig()
    workers: int = 1
    timing: bool = False
    output: Optional[str] = None

    def with_overrides(self, **changes) -> "ExperimentConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ExperimentConfig(**values)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "arch": self.arch.to_dict(),
            "bridge": self.bridge.to_dict(),
            "regime": self.regime.value,
            "train": self.train.to_dict(),
            "epochs": self.epochs,
            "ttt": self.ttt.to_dict(),
            "dataset": {
                "source": self.dataset.source,
                "synthetic": self.dataset.synthetic.to_dict(),
                "test_samples_per_class": self.dataset.test_samples_per_class,
                "train_seed_offset": self.dataset.train_seed_offset,
                "test_seed_offset": self.dataset.test_seed_offset,
                "paths": self.dataset.path_map,
                "target": self.dataset.target.to_dict() if self.dataset.target is not None else None,
            },
            "corruptions": [c.to_dict() for c in self.corruptions],
            "seeds": list(self.seeds),
            "analysis": {
                "blocks": list(self.analysis.blocks),
                "tune_steps": self.analysis.tune_steps,
                "tune_lr": self.analysis.tune_lr,
                "tune_momentum": self.analysis.tune_momentum,
                "probe_size": self.analysis.probe_size,
                "per_layer": self.analysis.per_layer,
            },
            "workers": self.workers,
            "timing": self.timing,
            "output": self.output,
        }


def _mapping(raw: Any, location: str) -> Dict[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(location, f"expected a mapping, got {type(raw).__name__}")
    return raw


def _check_keys(raw: Dict[str, Any], cls: Type, location: str) -> None:
    allowed = {f.name for f in fields(cls)}
    for key in raw:
        if key not in allowed:
            name = f"{location}.{key}" if location else str(key)
            raise ConfigError(name, f"unknown key (expected one of {sorted(allowed)})")


def _build(cls: Type, raw: Dict[str, Any], location: str):
    _check_keys(raw, cls, location)
    try:
        return cls(**raw)
    except ConfigError:
        raise
    except (ContractViolation, TypeError, ValueError) as e:
        raise ConfigError(location, str(e)) from e


def _int(value: Any, location: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(location, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(location, f"must be at least {minimum}, got {value}")
    return value


def _bool(value: Any, location: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(location, f"expected true or false, got {value!r}")
    return value


def _paths(
    raw: Any, required: Tuple[str, ...], source: str, base_dir: Optional[Path], location: str
) -> Tuple[Tuple[str, str], ...]:
    paths = _mapping(raw, location)
    for key in paths:
        if key not in required:
            raise ConfigError(f"{location}.{key}", f"unknown key for source {source!r}")
    resolved = {}
    for key in required:
        if key not in paths:
            raise ConfigError(f"{location}.{key}", f"missing required key for source {source!r}")
        path = Path(str(paths[key]))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"{location}.{key}", f"path {str(path)!r} does not exist")
        resolved[key] = str(path)
    return tuple(sorted(resolved.items()))


def _target(raw: Dict[str, Any], base_dir: Optional[Path]) -> TargetConfig:
    raw = dict(raw)
    _check_keys(raw, TargetConfig, "dataset.target")
    source = raw.get("source", TargetConfig.source)
    if source not in TARGET_PATH_KEYS:
        raise ConfigError("dataset.target.source", f"expected one of {tuple(TARGET_PATH_KEYS)}, got {source!r}")
    raw["paths"] = _paths(raw.get("paths"), TARGET_PATH_KEYS[source], source, base_dir, "dataset.target.paths")
    name = raw.get("name", TargetConfig.name)
    if not isinstance(name, str) or not name or name == "clean":
        raise ConfigError("dataset.target.name", f"expected a non-empty string other than 'clean', got {name!r}")
    return _build(TargetConfig, raw, "dataset.target")


def _dataset(raw: Dict[str, Any], base_dir: Optional[Path]) -> DatasetConfig:
    raw = dict(raw)
    _check_keys(raw, DatasetConfig, "dataset")
    source = raw.get("source", "synthetic")
    if source not in SOURCES:
        raise ConfigError("dataset.source", f"expected one of {SOURCES}, got {source!r}")
    raw["synthetic"] = _build(SyntheticSpec, _mapping(raw.get("synthetic"), "dataset.synthetic"), "dataset.synthetic")
    for key in ("test_samples_per_class", "train_seed_offset", "test_seed_offset"):
        if key in raw:
            _int(raw[key], f"dataset.{key}", 1 if key == "test_samples_per_class" else 0)
    raw["paths"] = _paths(raw.get("paths"), PATH_KEYS[source], source, base_dir, "dataset.paths")
    if raw.get("target") is not None:
        raw["target"] = _target(_mapping(raw["target"], "dataset.target"), base_dir)
    return _build(DatasetConfig, raw, "dataset")


def parse_config(text: str, kind: Optional[str] = None, base_dir: Union[str, Path, None] = None) -> ExperimentConfig:
    """
    Parses and validates a configuration document.

    :param text: YAML document
    :param kind: Experiment kind set by the caller; required in the document otherwise
    :param base_dir: Directory relative dataset paths are resolved against
    :return: Validated configuration with defaults applied
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError("", f"not a valid YAML document: {e}") from e
    raw = dict(_mapping(raw, "<document>"))
    _check_keys(raw, ExperimentConfig, "")
    base = Path(base_dir) if base_dir is not None else None

    if kind is not None:
        raw["kind"] = kind
    if "kind" not in raw:
        raise ConfigError("kind", f"missing required key (one of {KINDS})")
    if raw["kind"] not in KINDS:
        raise ConfigError("kind", f"expected one of {KINDS}, got {raw['kind']!r}")

    values: Dict[str, Any] = {"kind": raw["kind"]}
    sections = {"arch": ArchConfig, "bridge": BridgeConfig, "train": TrainConfig, "ttt": TTTConfig, "analysis": AnalysisConfig}
    for key, cls in sections.items():
        if key in raw:
            section = dict(_mapping(raw[key], key))
            for list_key in ("group_widths", "update_groups", "blocks"):
                if isinstance(section.get(list_key), list):
                    section[list_key] = tuple(section[list_key])
            values[key] = _build(cls, section, key)
    if "regime" in raw:
        try:
            values["regime"] = RegimeKind(raw["regime"])
        except ValueError as e:
            raise ConfigError("regime", f"expected one of {[r.value for r in RegimeKind]}, got {raw['regime']!r}") from e
    if "dataset" in raw:
        values["dataset"] = _dataset(_mapping(raw["dataset"], "dataset"), base)
    if "corruptions" in raw:
        items = raw["corruptions"] or []
        if not isinstance(items, list):
            raise ConfigError("corruptions", "expected a list")
        values["corruptions"] = tuple(
            _build(CorruptionSpec, _mapping(item, f"corruptions[{k}]"), f"corruptions[{k}]") for k, item in enumerate(items)
        )
    if "seeds" in raw:
        seeds = raw["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds", "expected a non-empty list of integers")
        values["seeds"] = tuple(_int(s, f"seeds[{k}]", 0) for k, s in enumerate(seeds))
    if "epochs" in raw:
        values["epochs"] = _int(raw["epochs"], "epochs", 0)
    if "workers" in raw:
        values["workers"] = _int(raw["workers"], "workers", 1)
    if "timing" in raw:
        values["timing"] = _bool(raw["timing"], "timing")
    if raw.get("output") is not None:
        values["output"] = str(raw["output"])

    config = ExperimentConfig(**values)
    if config.regime.uses_bridges and not config.bridge.enabled:
        raise ConfigError("bridge", f"regime {config.regime.value} needs an enabled bridge")
    return config


def serialize_config(config: ExperimentConfig) -> str:
    """YAML text that parses back to an equal configuration"""
    return yaml.safe_dump(config.to_dict(), sort_keys=False)

