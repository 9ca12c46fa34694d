"""
Layers, parameter registry, SGD and the checkpoint container.
"""
from .config import ArchConfig
from .registry import (
    GROUPS,
    ENCODER_SHARED,
    ENCODER_SS,
    ENCODER_MAIN_DERIVED,
    SS_HEAD,
    MAIN_HEAD,
    BRIDGE_DATA,
    BRIDGE_PREDICTOR,
    ParamRegistry,
    Snapshot,
    snapshot,
    restore,
    bind_params,
    named_grads,
)
from .layers import BlockParams, group_norm, residual_block_forward, kaiming_normal, param_rng
from .optim import SGDState, sgd_step, cosine_lr
from .checkpoint import save_checkpoint, load_checkpoint
