# Test-time training: adapt on the rotation task of one unlabeled input, then predict
from dataclasses import dataclass, fields
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..engine import Tape, backward, ops
from ..errors import ContractViolation
from ..nn import ENCODER_SHARED, ENCODER_SS, SS_HEAD, SGDState, named_grads, restore, sgd_step, snapshot
from ..nn.registry import check_groups
from ..ssdn import Model, forward_main, forward_ss
from .result import TTTResult
from .rotation import make_rotation_batch

DEFAULT_UPDATE_GROUPS = (ENCODER_SHARED, ENCODER_SS, SS_HEAD)


class TTTMode(str, Enum):
    SINGLE = "Single"  # every test input starts from the trained parameters
    ONLINE = "Online"  # updates carry over to the next input


@dataclass(frozen=True)
class TTTConfig:
    K: int = 16
    lr: float = 0.001
    momentum: float = 0.0
    weight_decay: float = 0.0
    update_groups: Tuple[str, ...] = DEFAULT_UPDATE_GROUPS
    mode: TTTMode = TTTMode.SINGLE
    online_seed: Optional[int] = 0  # stream shuffle for Online evaluation; None keeps dataset order

    def __post_init__(self):
        object.__setattr__(self, "update_groups", tuple(self.update_groups))
        object.__setattr__(self, "mode", TTTMode(self.mode))
        if isinstance(self.K, bool) or not isinstance(self.K, (int, np.integer)):
            raise ContractViolation(f"TTTConfig.K must be an int, got {self.K!r}")
        if self.K < 0:
            raise ContractViolation(f"TTTConfig.K must be non-negative, got {self.K}")
        if self.lr <= 0:
            raise ContractViolation("TTTConfig.lr must be positive")
        check_groups(self.update_groups)

    def make_state(self) -> SGDState:
        return SGDState(lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": self.K,
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "update_groups": list(self.update_groups),
            "mode": self.mode.value,
            "online_seed": self.online_seed,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TTTConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractViolation(f"TTTConfig: unknown keys {sorted(unknown)}")
        return cls(**d)


def rotation_loss(model: Model, batch: np.ndarray, labels: np.ndarray) -> float:
    """l_s of a rotation batch under the current parameters"""
    tape = Tape(model.dtype)
    logits, _ = forward_ss(model, tape.leaf(batch))
    return float(ops.softmax_cross_entropy(logits, labels).value)


def ttt_adapt(
    model: Model,
    x: np.ndarray,
    cfg: TTTConfig,
    state: Optional[SGDState] = None,
) -> TTTResult:
    """
    Adapts to one test input and predicts its class.

    Runs cfg.K SGD steps on the rotation loss of the input, updating only
    cfg.update_groups, then predicts with the adapted parameters. In Single
    mode the adapted groups and their momentum buffers are restored bitwise
    before returning; in Online mode the updates are kept.

    :param model: Trained model
    :param x: Input [C, S, S] scaled to [-1, 1]
    :param cfg: Adaptation settings
    :param state: Optimizer state to use (a fresh one when None); Online
                  evaluation passes the same state for the whole stream
    """
    if cfg.K < 0:
        raise ContractViolation(f"TTTConfig.K must be non-negative, got {cfg.K}")
    x = np.asarray(x)
    if x.ndim != 3:
        raise ContractViolation(f"ttt_adapt expects one [C,H,W] input, got {x.shape}")
    state = state if state is not None else cfg.make_state()
    saved = snapshot(model.registry, cfg.update_groups, state) if cfg.mode == TTTMode.SINGLE else None

    batch, labels = make_rotation_batch(x)
    ss_losses = []
    try:
        for _ in range(cfg.K):
            tape = Tape(model.dtype)
            params = model.bind(tape, groups=cfg.update_groups)
            logits, _ = forward_ss(model, tape.leaf(batch), params)
            loss = ops.softmax_cross_entropy(logits, labels)
            ss_losses.append(float(loss.value))
            grads = backward(loss)
            sgd_step(model.registry, named_grads(grads, params), state, groups=cfg.update_groups)
        ss_losses.append(rotation_loss(model, batch, labels))

        tape = Tape(model.dtype)
        logits = forward_main(model, tape.leaf(x[None])).value[0].copy()
    finally:
        if saved is not None:
            restore(model.registry, saved, state)
    return TTTResult(int(np.argmax(logits)), logits, ss_losses)
