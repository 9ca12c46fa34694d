"""
Self-Supervised Dynamic Network: split encoder, bridges, and both forward paths.
"""
from .config import BridgeConfig, BRIDGEABLE_UNITS
from .bridge import BridgeLayer, AlphaSignal, bridge_weights
from .model import (
    Model,
    build_model,
    bridge_layout,
    bridged_layers,
    encoder_blocks,
    encoder_convs,
    expected_param_count,
    forward_ss,
    forward_main,
    encoder_activations,
    save_model,
    load_model,
)
