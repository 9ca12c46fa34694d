# Joint training of the main and rotation tasks
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional

import numpy as np
from tqdm.auto import tqdm

from ..engine import Tape, backward, ops
from ..errors import ContractViolation
from ..nn import SGDState, cosine_lr, named_grads, sgd_step
from ..shifts import ImageDataset, to_inputs
from ..ssdn import Model, forward_main, forward_ss
from .result import Metrics
from .rotation import rotation_batches
from .utils import u_batchify, u_error_percent

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lambda_ss: float = 1.0
    cosine: bool = True
    max_steps: Optional[int] = None  # caps the run below epochs * batches

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractViolation("TrainConfig.batch_size must be positive")
        if self.lr <= 0:
            raise ContractViolation("TrainConfig.lr must be positive")
        if self.lambda_ss < 0:
            raise ContractViolation("TrainConfig.lambda_ss must be non-negative")
        if self.max_steps is not None and self.max_steps < 0:
            raise ContractViolation("TrainConfig.max_steps must be non-negative")

    def make_state(self) -> SGDState:
        return SGDState(lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractViolation(f"TrainConfig: unknown keys {sorted(unknown)}")
        return cls(**d)


def joint_train(
    model: Model,
    dataset: ImageDataset,
    epochs: int,
    seed: int,
    config: Optional[TrainConfig] = None,
    quiet: bool = True,
) -> Metrics:
    """
    Minimizes l_m(x, y) + lambda * l_s over minibatches.

    l_m is computed on clean images through the main path; l_s on the
    rotation batches of the same images through the self-supervised path.
    Every registered parameter is updated by one SGD step per minibatch.

    :param model: Model, trained in place
    :param dataset: Labeled training set
    :param epochs: Passes over the dataset
    :param seed: Minibatch order seed
    :param config: Optimizer and loss settings
    :param quiet: Hide the progress bar
    :return: Metrics with per-step loss curves and running training errors of the last epoch
    """
    config = config or TrainConfig()
    if len(dataset) == 0:
        raise ContractViolation(f"Cannot train on empty dataset {dataset.name!r}")
    if epochs < 0:
        raise ContractViolation(f"epochs must be non-negative, got {epochs}")

    batches_per_epoch = math.ceil(len(dataset) / config.batch_size)
    total_steps = epochs * batches_per_epoch
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)
    if total_steps == 0:
        return Metrics()

    rng = np.random.default_rng(seed)
    state = config.make_state()
    inputs = to_inputs(dataset.images, model.dtype)
    losses, main_losses, ss_losses = [], [], []
    step = 0
    with tqdm(total=total_steps, desc=f"train {model.bridge.label}", disable=quiet) as progress:
        for epoch in range(epochs):
            if step >= total_steps:
                break
            main_pred, main_true, rot_pred, rot_true = [], [], [], []
            first = len(losses)
            order = rng.permutation(len(dataset))
            for batch in u_batchify(order, config.batch_size):
                if step >= total_steps:
                    break
                labels = dataset.labels[batch]
                tape = Tape(model.dtype)
                params = model.bind(tape)
                logits = forward_main(model, tape.leaf(inputs[batch]), params)
                loss = loss_main = ops.softmax_cross_entropy(logits, labels)
                main_pred.extend(np.argmax(logits.value, axis=1))
                main_true.extend(labels)
                loss_ss = 0.0
                if config.lambda_ss > 0:
                    rot_x, rot_y = rotation_batches(inputs[batch])
                    rot_logits, _ = forward_ss(model, tape.leaf(rot_x), params)
                    weighted = ops.scale(ops.softmax_cross_entropy(rot_logits, rot_y), config.lambda_ss)
                    loss = ops.add(loss_main, weighted)
                    loss_ss = float(weighted.value)
                    rot_pred.extend(np.argmax(rot_logits.value, axis=1))
                    rot_true.extend(rot_y)
                grads = backward(loss)
                if config.cosine:
                    state.lr = cosine_lr(config.lr, step, total_steps)
                sgd_step(model.registry, named_grads(grads, params), state)
                losses.append(float(loss.value))
                main_losses.append(float(loss_main.value))
                ss_losses.append(loss_ss)
                step += 1
                progress.update(1)
                progress.set_postfix(loss=f"{losses[-1]:.4f}")
            logger.info(
                "Epoch %d: loss %.4f, main error %.2f%%",
                epoch,
                float(np.mean(losses[first:])) if len(losses) > first else float("nan"),
                u_error_percent(main_pred, main_true),
            )

    return Metrics(
        main_error_percent=u_error_percent(main_pred, main_true),
        ss_error_percent=u_error_percent(rot_pred, rot_true),
        losses=losses,
        main_losses=main_losses,
        ss_losses=ss_losses,
    )


def train_standard(
    model: Model,
    dataset: ImageDataset,
    epochs: int,
    seed: int,
    config: Optional[TrainConfig] = None,
    quiet: bool = True,
) -> Metrics:
    """Supervised main-task training only: joint_train with lambda = 0"""
    config = config or TrainConfig()
    config = TrainConfig(**{**config.to_dict(), "lambda_ss": 0.0})
    return joint_train(model, dataset, epochs, seed, config, quiet)
