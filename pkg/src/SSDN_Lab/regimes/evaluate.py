# Evaluation regimes over a labeled test set
import logging
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm.auto import tqdm

from ..engine import Tape
from ..errors import ContractViolation
from ..shifts import ImageDataset, to_inputs
from ..ssdn import BridgeConfig, Model, forward_main, forward_ss
from .result import Metrics
from .rotation import rotation_batches
from .ttt import TTTConfig, TTTMode, ttt_adapt
from .utils import u_batchify, u_error_percent, u_shards

logger = logging.getLogger(__name__)

EVAL_BATCH = 64


class RegimeKind(str, Enum):
    STANDARD = "Standard"
    JOINT_TRAINING = "JointTraining"
    ORIGINAL_TTT = "OriginalTTT"
    SSDN_ONE_PASS = "SSDNOnePass"
    SSDN_PLUS_TTT = "SSDNPlusTTT"

    @property
    def uses_ttt(self) -> bool:
        return self in (RegimeKind.ORIGINAL_TTT, RegimeKind.SSDN_PLUS_TTT)

    @property
    def uses_bridges(self) -> bool:
        return self in (RegimeKind.SSDN_ONE_PASS, RegimeKind.SSDN_PLUS_TTT)

    @property
    def trains_ss(self) -> bool:
        return self != RegimeKind.STANDARD

    def bridge_config(self, bridged: Optional[BridgeConfig] = None) -> BridgeConfig:
        """
        Bridge configuration a model of this regime is built with.

        :param bridged: Configuration for the SSDN regimes (G1 split with both bridges when None)
        """
        if not self.uses_bridges:
            return BridgeConfig.shared()
        bridged = bridged or BridgeConfig()
        if not bridged.enabled:
            raise ContractViolation(f"Regime {self.value} needs a bridge configuration with a split")
        return bridged

    def check_model(self, model: Model) -> None:
        if self.uses_bridges != model.bridge.enabled:
            raise ContractViolation(
                f"Regime {self.value} does not match a model with bridges {model.bridge.label} "
                f"(data={model.bridge.enable_data_bridge}, signal={model.bridge.enable_signal_bridge})"
            )


def predict_logits(model: Model, inputs: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Class logits [N, classes] for inputs scaled to [-1, 1]"""
    out = []
    for batch in u_batchify(inputs, batch_size):
        tape = Tape(model.dtype)
        out.append(forward_main(model, tape.leaf(batch)).value.copy())
    return np.concatenate(out) if out else np.zeros((0, model.arch.num_classes), dtype=model.dtype)


def rotation_logits(model: Model, inputs: np.ndarray, batch_size: int = EVAL_BATCH) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation logits [4N, 4] of every input's rotation batch, with their labels"""
    logits, labels = [], []
    for batch in u_batchify(inputs, batch_size):
        rot_x, rot_y = rotation_batches(batch)
        tape = Tape(model.dtype)
        logits.append(forward_ss(model, tape.leaf(rot_x))[0].value.copy())
        labels.append(rot_y)
    if not logits:
        return np.zeros((0, model.arch.num_rotation_classes), dtype=model.dtype), np.zeros(0, dtype=np.int64)
    return np.concatenate(logits), np.concatenate(labels)


def _adapt_range(model: Model, inputs: np.ndarray, indices: range, cfg: TTTConfig, progress) -> Dict[int, int]:
    local = model.clone()
    predictions = {}
    for k in indices:
        predictions[k] = ttt_adapt(local, inputs[k], cfg).prediction
        progress.update(1)
    return predictions


def _ttt_predictions(model: Model, inputs: np.ndarray, cfg: TTTConfig, workers: int, quiet: bool) -> List[int]:
    n = len(inputs)
    with tqdm(total=n, desc=f"ttt {cfg.mode.value}", disable=quiet) as progress:
        if cfg.mode == TTTMode.ONLINE:
            order = np.arange(n) if cfg.online_seed is None else np.random.default_rng(cfg.online_seed).permutation(n)
            stream = model.clone()
            state = cfg.make_state()
            predictions = {}
            for k in order:
                predictions[int(k)] = ttt_adapt(stream, inputs[k], cfg, state).prediction
                progress.update(1)
        else:
            shards = u_shards(n, workers)
            if len(shards) == 1:
                predictions = _adapt_range(model, inputs, shards[0], cfg, progress)
            else:
                # one model clone per worker; results merged by sample index
                with ThreadPoolExecutor(max_workers=len(shards)) as pool:
                    parts = list(pool.map(lambda r: _adapt_range(model, inputs, r, cfg, progress), shards))
                predictions = {k: p for part in parts for k, p in part.items()}
    return [predictions[k] for k in range(n)]


def evaluate(
    model: Model,
    dataset: ImageDataset,
    regime: RegimeKind,
    cfg: Optional[TTTConfig] = None,
    workers: int = 1,
    quiet: bool = True,
) -> Metrics:
    """
    Main-task and rotation errors of a model under one regime.

    The rotation error is measured with the parameters as given, before any
    adaptation. TTT regimes adapt per sample (Single) or along a stream
    (Online); in both cases the caller's model is left untouched.

    :param model: Trained model whose bridges match the regime
    :param dataset: Labeled test set
    :param regime: Evaluation regime
    :param cfg: Adaptation settings for TTT regimes
    :param workers: Shards for Single-mode adaptation
    :param quiet: Hide progress bars
    :return: Metrics with per_shift keyed by the dataset name
    """
    regime = RegimeKind(regime)
    regime.check_model(model)
    cfg = cfg or TTTConfig()
    inputs = to_inputs(dataset.images, model.dtype)

    rot_logits, rot_labels = rotation_logits(model, inputs)
    ss_error = u_error_percent(np.argmax(rot_logits, axis=1), rot_labels)
    if regime.uses_ttt:
        predictions = _ttt_predictions(model, inputs, cfg, workers, quiet)
    else:
        predictions = list(np.argmax(predict_logits(model, inputs), axis=1))
    main_error = u_error_percent(predictions, dataset.labels)
    logger.info("%s on %s: main error %.2f%%, rotation error %.2f%%", regime.value, dataset.name, main_error, ss_error)
    return Metrics(main_error_percent=main_error, ss_error_percent=ss_error, per_shift={dataset.name: main_error})


def rotation_error(model: Model, dataset: ImageDataset) -> float:
    """Rotation-prediction error in percent over every image's four rotations"""
    logits, labels = rotation_logits(model, to_inputs(dataset.images, model.dtype))
    return u_error_percent(np.argmax(logits, axis=1), labels)
