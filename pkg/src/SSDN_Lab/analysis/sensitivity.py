"""
Block sensitivity to covariate shift.

A reference model is cloned, one block is unfrozen and fine-tuned on shifted
data while the rest stays fixed, and the block's output before and after is
compared with linear CKA over a probe set. Low similarity marks a block that
must change most to absorb the shift. A control band comes from comparing
independently seeded reference models block by block.
"""
import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..engine import Tape, backward, ops
from ..errors import ContractViolation
from ..nn import ArchConfig, SGDState, named_grads, sgd_step
from ..regimes import TrainConfig, joint_train
from ..regimes.utils import u_batchify
from ..shifts import ImageDataset, to_inputs
from ..ssdn import BridgeConfig, Model, build_model, encoder_activations, forward_main
from .cka import MAX_COLUMNS, ActivationMatrix, linear_cka

logger = logging.getLogger(__name__)

PROBE_SIZE = 256


@dataclass(frozen=True)
class TuneConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 32
    max_columns: int = MAX_COLUMNS

    def make_state(self) -> SGDState:
        return SGDState(lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay)


def block_outputs(model: Model, probe: ImageDataset, block_id: str, batch_size: int = 64) -> np.ndarray:
    """Main-path output of one block for every probe image, [N, C, H, W]"""
    if block_id not in model.block_ids:
        raise ContractViolation(f"Unknown block id {block_id!r}; expected one of {model.block_ids}")
    inputs = to_inputs(probe.images, model.dtype)
    out = []
    for batch in u_batchify(inputs, batch_size):
        tape = Tape(model.dtype)
        out.append(encoder_activations(model, tape.leaf(batch))[block_id].value.copy())
    return np.concatenate(out)


def block_similarity(a: Model, b: Model, probe: ImageDataset, block_id: str, max_columns: int = MAX_COLUMNS) -> float:
    """Linear CKA between two models' outputs of the same block"""
    x = ActivationMatrix.from_activations(block_outputs(a, probe, block_id), max_columns)
    y = ActivationMatrix.from_activations(block_outputs(b, probe, block_id), max_columns)
    return linear_cka(x, y)


def fine_tune_block(
    model: Model, dataset: ImageDataset, block_id: str, steps: int, seed: int, config: Optional[TuneConfig] = None
) -> None:
    """Supervised fine-tuning of one block in place; every other parameter stays frozen"""
    config = config or TuneConfig()
    names = model.block_param_names(block_id)
    if steps and len(dataset) == 0:
        raise ContractViolation(f"Cannot fine-tune on empty dataset {dataset.name!r}")
    rng = np.random.default_rng(seed)
    state = config.make_state()
    inputs = to_inputs(dataset.images, model.dtype)
    batches: List[np.ndarray] = []
    for _ in range(steps):
        if not batches:
            batches = list(reversed(u_batchify(rng.permutation(len(dataset)), config.batch_size)))
        batch = batches.pop()
        tape = Tape(model.dtype)
        unfrozen = {n: tape.leaf(model.registry[n], requires_grad=True, name=n) for n in names}
        params = model.bind(tape, groups=(), overrides=unfrozen)
        loss = ops.softmax_cross_entropy(forward_main(model, tape.leaf(inputs[batch]), params), dataset.labels[batch])
        sgd_step(model.registry, named_grads(backward(loss), params), state, names=names)


def block_sensitivity(
    reference: Model,
    shifted: ImageDataset,
    block_id: str,
    probe: ImageDataset,
    tune_steps: int = 500,
    seed: int = 0,
    config: Optional[TuneConfig] = None,
) -> float:
    """
    Similarity of one block before and after fine-tuning it alone on shifted data.

    :param reference: Model trained on the clean source set, left untouched
    :param shifted: Labeled shifted data to fine-tune on
    :param block_id: C0, G{g} or G{g}.B{b}
    :param probe: Images whose block outputs are compared
    :param tune_steps: Fine-tuning steps; 0 gives exactly 1.0
    :param seed: Minibatch order seed
    """
    config = config or TuneConfig()
    if block_id not in reference.block_ids:
        raise ContractViolation(f"Unknown block id {block_id!r}; expected one of {reference.block_ids}")
    tuned = reference.clone()
    fine_tune_block(tuned, shifted, block_id, tune_steps, seed, config)
    score = block_similarity(reference, tuned, probe, block_id, config.max_columns)
    logger.debug("Sensitivity of %s on %s: %.4f", block_id, shifted.name, score)
    return score


def group_ids(model: Model) -> List[str]:
    return [b for b in model.block_ids if "." not in b and b != "C0"]


def control_similarity(
    arch: ArchConfig,
    dataset: ImageDataset,
    seeds: Sequence[int],
    epochs: int = 1,
    train_config: Optional[TrainConfig] = None,
    bridge: Optional[BridgeConfig] = None,
    probe: Optional[ImageDataset] = None,
    blocks: Optional[Sequence[str]] = None,
    max_columns: int = MAX_COLUMNS,
) -> Dict[str, List[float]]:
    """
    Per-block CKA between reference models trained from different seeds.

    :param arch: Encoder shape
    :param dataset: Clean training set
    :param seeds: At least two seeds; one reference model is trained per seed
    :param probe: Comparison images (first PROBE_SIZE of the dataset when None)
    :param blocks: Block ids to compare (every group when None)
    :return: block id -> CKA of every seed pair
    """
    if len(seeds) < 2:
        raise ContractViolation(f"control_similarity needs at least 2 seeds, got {len(seeds)}")
    bridge = bridge or BridgeConfig.shared()
    if probe is None:
        probe = dataset.subset(range(min(PROBE_SIZE, len(dataset))), f"{dataset.name}/probe")
    models = []
    for seed in seeds:
        model = build_model(arch, bridge, seed)
        joint_train(model, dataset, epochs, seed, train_config)
        models.append(model)
    return pairwise_similarity(models, probe, blocks, max_columns)


def pairwise_similarity(
    models: Sequence[Model],
    probe: ImageDataset,
    blocks: Optional[Sequence[str]] = None,
    max_columns: int = MAX_COLUMNS,
) -> Dict[str, List[float]]:
    """Per-block CKA of every pair of already trained models"""
    if len(models) < 2:
        raise ContractViolation(f"pairwise_similarity needs at least 2 models, got {len(models)}")
    blocks = list(blocks) if blocks is not None else group_ids(models[0])
    band: Dict[str, List[float]] = {b: [] for b in blocks}
    for a, b in itertools.combinations(models, 2):
        for block_id in blocks:
            band[block_id].append(block_similarity(a, b, probe, block_id, max_columns))
    return band


@dataclass
class SensitivityReport:
    """Per-block, per-corruption, per-seed scores and the control band they are read against"""

    scores: Dict[Tuple[str, str, int], float] = field(default_factory=dict)
    control: Dict[str, List[float]] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=list)

    def add(self, block_id: str, corruption: str, seed: int, score: float) -> None:
        self.scores[(block_id, corruption, seed)] = score
        if seed not in self.seeds:
            self.seeds.append(seed)

    def score(self, block_id: str, corruption: str, seed: int) -> float:
        return self.scores[(block_id, corruption, seed)]

    def control_band(self, block_id: str) -> Tuple[float, float]:
        """Mean and minimum of the control scores of one block"""
        values = self.control.get(block_id)
        if not values:
            raise ContractViolation(f"No control scores for block {block_id!r}")
        return float(np.mean(values)), float(np.min(values))

    def rows(self) -> List[Dict[str, Union[str, float, int]]]:
        rows = [{"block": b, "corruption": c, "score": s, "seed": seed} for (b, c, seed), s in self.scores.items()]
        for block_id, values in self.control.items():
            rows.extend({"block": block_id, "corruption": "control", "score": v, "seed": -1} for v in values)
        return rows

    def write_csv(self, path: Union[str, Path]) -> None:
        """block, corruption, score, seed; control pairs carry seed -1"""
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["block", "corruption", "score", "seed"], lineterminator="\n")
            writer.writeheader()
            for row in self.rows():
                writer.writerow({**row, "score": f"{row['score']:.6f}"})
