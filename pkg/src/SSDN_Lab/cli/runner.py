# Experiment runner: builds datasets and models from an ExperimentConfig and writes the run artifacts
import csv
import json
import logging
import platform
import sys
import time
from collections import defaultdict
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import scipy
import sklearn

from .. import __version__
from ..analysis import (
    SensitivityReport,
    TuneConfig,
    alpha_projection,
    block_sensitivity,
    collect_alpha_records,
    pairwise_similarity,
)
from ..errors import ConfigError, ContractViolation, SSDNError
from ..regimes import Metrics, RegimeKind, evaluate, joint_train, train_standard
from ..shifts import (
    ImageDataset,
    corrupt_dataset,
    gen_synthetic,
    load_cifar10_binary,
    load_mnist_idx,
)
from ..ssdn import BridgeConfig, Model, bridged_layers, build_model, save_model
from .config import ExperimentConfig
from .metrics import MetricsRow, write_metrics

logger = logging.getLogger(__name__)

CLEAN = "clean"


def load_datasets(config: ExperimentConfig, seed: int) -> Tuple[ImageDataset, ImageDataset]:
    """Training and clean test sets of one seed"""
    ds = config.dataset
    paths = ds.path_map
    if ds.source == "synthetic":
        train = gen_synthetic(ds.synthetic, seed + ds.train_seed_offset, "train")
        test_spec = replace(ds.synthetic, samples_per_class=ds.test_samples_per_class)
        test = gen_synthetic(test_spec, seed + ds.test_seed_offset, CLEAN)
    elif ds.source == "cifar10":
        train = load_cifar10_binary(paths["train"])
        test = load_cifar10_binary(paths["test"])
    else:
        train = load_mnist_idx(paths["train_images"], paths["train_labels"])
        test = load_mnist_idx(paths["test_images"], paths["test_labels"])
    train = train.as_channels(config.arch.in_channels)
    test = test.as_channels(config.arch.in_channels)
    test = ImageDataset(test.images, test.labels, CLEAN, test.class_count)
    if train.class_count != config.arch.num_classes:
        raise ConfigError(
            "arch.num_classes", f"dataset has {train.class_count} classes, arch has {config.arch.num_classes}"
        )
    return train, test


def load_target(config: ExperimentConfig, train: ImageDataset) -> Optional[ImageDataset]:
    """
    The configured covariate-shifted target set, mapped onto the training images' layout.

    Grayscale targets are replicated to the encoder's channels and resampled
    to the training image size; CIFAR-style records are read at that size.

    :return: None when no target is configured
    """
    target = config.dataset.target
    if target is None:
        return None
    paths = target.path_map
    _, height, width = train.image_shape
    if target.source == "cifar10":
        data = load_cifar10_binary(paths["test"], (3, height, width), config.arch.num_classes)
    else:
        data = load_mnist_idx(paths["test_images"], paths["test_labels"], config.arch.num_classes)
    try:
        data = data.as_channels(config.arch.in_channels).resized(height, width)
    except ContractViolation as e:
        raise ConfigError("dataset.target", str(e)) from e
    logger.info("Target %s: %d images resized to %s", target.name, len(data), data.image_shape)
    return ImageDataset(data.images, data.labels, target.name, train.class_count)


class _Run:
    """State of one run: output directory, collected rows and timings"""

    def __init__(self, config: ExperimentConfig, out_dir: Path, quiet: bool):
        self.config = config
        self.out_dir = out_dir
        self.quiet = quiet
        self.rows: List[MetricsRow] = []
        self.timings: Dict[str, float] = {}
        self.files: List[str] = []
        self.target: Optional[ImageDataset] = None
        self._target_loaded = False

    def datasets(self, seed: int) -> Tuple[ImageDataset, ImageDataset]:
        """Training and clean test sets of one seed; the target set is loaded once"""
        train, test = load_datasets(self.config, seed)
        if not self._target_loaded:
            self.target = load_target(self.config, train)
            self._target_loaded = True
        return train, test

    def wall_ms(self, started: float) -> int:
        return int(round((time.perf_counter() - started) * 1000)) if self.config.timing else 0

    def timed(self, key: str, started: float) -> None:
        self.timings[key] = round(time.perf_counter() - started, 3)

    def train(self, bridge: BridgeConfig, regime: RegimeKind, train: ImageDataset, seed: int, tag: str) -> Tuple[Model, Metrics]:
        started = time.perf_counter()
        model = build_model(self.config.arch, bridge, seed)
        fit = train_standard if regime == RegimeKind.STANDARD else joint_train
        history = fit(model, train, self.config.epochs, seed, self.config.train, self.quiet)
        self.timed(f"train/{tag}/seed{seed}", started)
        checkpoint = self.out_dir / "checkpoints" / f"{tag}-seed{seed}.ckpt"
        checkpoint.parent.mkdir(exist_ok=True)
        save_model(model, checkpoint)
        self.files.append(str(checkpoint.relative_to(self.out_dir)))
        return model, history

    def evaluate(
        self, model: Model, regime: RegimeKind, label: str, test: ImageDataset, seed: int, shifts: bool = True
    ) -> None:
        """
        One metrics row for the clean test set, then one per configured
        corruption and one for the target set, if any
        """
        sets: List[Tuple[str, int, ImageDataset]] = [(CLEAN, 0, test)]
        if shifts:
            sets += [(spec.kind, spec.severity, corrupt_dataset(test, spec)) for spec in self.config.corruptions]
            if self.target is not None:
                sets.append((self.target.name, 0, self.target))
        for name, severity, shifted in sets:
            started = time.perf_counter()
            metrics = evaluate(model, shifted, regime, self.config.ttt, self.config.workers, self.quiet)
            self.timed(f"eval/{label}/{shifted.name}/seed{seed}", started)
            self.rows.append(
                MetricsRow(
                    label, name, severity, seed, metrics.main_error_percent, metrics.ss_error_percent, self.wall_ms(started)
                )
            )

    def write_losses(self, histories: List[Tuple[str, int, Metrics]]) -> None:
        path = self.out_dir / "losses.csv"
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["regime", "seed", "step", "loss", "main_loss", "ss_loss"])
            for label, seed, m in histories:
                for step, (loss, main, ss) in enumerate(zip(m.losses, m.main_losses, m.ss_losses)):
                    writer.writerow([label, seed, step, f"{loss:.6f}", f"{main:.6f}", f"{ss:.6f}"])
        self.files.append(path.name)


def _train_eval(run: _Run, evaluate_shifts: bool) -> None:
    config = run.config
    regime = config.regime
    bridge = regime.bridge_config(config.bridge)
    histories = []
    for seed in config.seeds:
        train, test = run.datasets(seed)
        model, history = run.train(bridge, regime, train, seed, regime.value)
        histories.append((regime.value, seed, history))
        run.evaluate(model, regime, regime.value, test, seed, shifts=evaluate_shifts)
    run.write_losses(histories)


def _ablation(run: _Run) -> None:
    config = run.config
    regime = config.regime if config.regime.uses_bridges else RegimeKind.SSDN_ONE_PASS
    histories = []
    for seed in config.seeds:
        train, test = run.datasets(seed)
        for row in BridgeConfig.ablation_rows():
            label = f"{regime.value}[{row.label}]"
            tag = f"ablation-{row.label.replace('/', '')}"
            model, history = run.train(row, regime, train, seed, tag)
            histories.append((label, seed, history))
            run.evaluate(model, regime, label, test, seed)
    run.write_losses(histories)


def _sensitivity(run: _Run) -> None:
    config = run.config
    analysis = config.analysis
    regime = config.regime
    bridge = regime.bridge_config(config.bridge)
    tune = TuneConfig(lr=analysis.tune_lr, momentum=analysis.tune_momentum)
    report = SensitivityReport()
    references = []
    # one dataset for every seed: reference models differ only in initialization and minibatch order
    train, test = run.datasets(config.seeds[0])
    probe = test.subset(range(min(analysis.probe_size, len(test))), "probe")
    for seed in config.seeds:
        model, _ = run.train(bridge, regime, train, seed, f"reference-{regime.value}")
        references.append(model)
        run.evaluate(model, regime, regime.value, test, seed)
        for spec in config.corruptions:
            shifted = corrupt_dataset(train, spec)
            for block_id in analysis.blocks:
                started = time.perf_counter()
                score = block_sensitivity(model, shifted, block_id, probe, analysis.tune_steps, seed, tune)
                report.add(block_id, spec.name, seed, score)
                run.timed(f"sensitivity/{block_id}/{spec.name}/seed{seed}", started)
    if len(references) >= 2:
        report.control = pairwise_similarity(references, probe, analysis.blocks, tune.max_columns)
    else:
        logger.warning("A control band needs at least 2 seeds; sensitivity.csv has no control rows")
    path = run.out_dir / "sensitivity.csv"
    report.write_csv(path)
    run.files.append(path.name)


def _alphas(run: _Run) -> None:
    config = run.config
    bridge = config.bridge if config.bridge.enabled else BridgeConfig()
    if not bridge.enable_signal_bridge:
        raise ConfigError("bridge.enable_signal_bridge", "the alphas experiment needs the signal bridge")
    regime = config.regime if config.regime.uses_bridges else RegimeKind.SSDN_ONE_PASS
    for seed in config.seeds:
        train, test = run.datasets(seed)
        model, _ = run.train(bridge, regime, train, seed, f"alphas-{regime.value}")
        run.evaluate(model, regime, regime.value, test, seed)
        per_layer = config.analysis.per_layer
        records = collect_alpha_records(model, test, CLEAN, per_layer)
        for spec in config.corruptions:
            records += collect_alpha_records(model, corrupt_dataset(test, spec), spec.name, per_layer)
        if run.target is not None:
            records += collect_alpha_records(model, run.target, run.target.name, per_layer)

        # one projection per bridged layer, or one over the whole signal
        by_layer = defaultdict(list)
        for record in records:
            by_layer[record.layer].append(record)
        tags = {layer.layer_name: layer.tag for layer in bridged_layers(model)}
        for layer, group in by_layer.items():
            report = alpha_projection(group)
            suffix = "" if layer is None else f"-{tags[layer]}"
            logger.info(
                "Seed %d%s: mean silhouette %.3f %s", seed, suffix, report.mean_silhouette, report.silhouette
            )
            path = run.out_dir / f"alphas-seed{seed}{suffix}.csv"
            report.write_csv(path)
            run.files.append(path.name)


_EXPERIMENTS = {
    "train": lambda run: _train_eval(run, evaluate_shifts=False),
    "eval": lambda run: _train_eval(run, evaluate_shifts=True),
    "ablation": _ablation,
    "sensitivity": _sensitivity,
    "alphas": _alphas,
}


def _manifest(run: _Run) -> Dict:
    return {
        "config": run.config.to_dict(),
        "seeds": list(run.config.seeds),
        "kind": run.config.kind,
        "versions": {
            "ssdn_lab": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
            "python": platform.python_version(),
        },
        "files": sorted(run.files),
        "timings_s": run.timings,
        "argv": sys.argv[1:],
    }


def execute(config: ExperimentConfig, out_dir: Union[str, Path], quiet: bool = False) -> Path:
    """
    Runs one experiment.

    Writes metrics.csv, manifest.json, losses / report CSVs and checkpoints
    into a new output directory.

    :param config: Validated configuration
    :param out_dir: Output directory; must not exist yet
    :param quiet: Hide progress bars
    :return: Output directory
    """
    out_dir = Path(out_dir)
    if out_dir.exists():
        raise FileExistsError(f"Output directory {out_dir} already exists; refusing to overwrite it")
    out_dir.mkdir(parents=True)
    run = _Run(config, out_dir, quiet)
    started = time.perf_counter()
    _EXPERIMENTS[config.kind](run)
    run.timed("total", started)
    write_metrics(out_dir / "metrics.csv", run.rows)
    run.files.append("metrics.csv")
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(_manifest(run), f, indent=2, sort_keys=True)
    logger.info("Wrote %d metric rows to %s", len(run.rows), out_dir)
    return out_dir


def run(config: ExperimentConfig, out_dir: Union[str, Path, None] = None, quiet: bool = False) -> int:
    """
    Runs one experiment and maps failures to an exit code.

    :return: 0 on success, 1 with a diagnostic on standard error otherwise
    """
    target = out_dir if out_dir is not None else config.output
    try:
        if target is None:
            raise ConfigError("output", "no output directory given (--out or output:)")
        execute(config, target, quiet)
    except (SSDNError, OSError) as e:
        print(f"ssdn-lab: error: {e}", file=sys.stderr)
        return 1
    return 0
