# Split encoder with bridges: C0 -> (E_s | E_m) -> E_sm -> heads S and M
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from ..engine import Var, ops
from ..errors import ContractViolation
from ..nn import (
    BRIDGE_DATA,
    BRIDGE_PREDICTOR,
    ENCODER_SHARED,
    ENCODER_SS,
    MAIN_HEAD,
    SS_HEAD,
    ArchConfig,
    BlockParams,
    ParamRegistry,
    bind_params,
    group_norm,
    kaiming_normal,
    load_checkpoint,
    param_rng,
    residual_block_forward,
    save_checkpoint,
)
from .bridge import AlphaSignal, BridgeLayer, bridge_weights
from .config import BridgeConfig

logger = logging.getLogger(__name__)

Params = Dict[str, Var]


@dataclass(frozen=True)
class ConvSpec:
    name: str  # prefix without ".weight"
    c_out: int
    c_in: int
    kernel: int
    unit: str  # "c0", "g1", ...


@dataclass(frozen=True)
class BlockSpec:
    prefix: str  # "g1.b0"
    group: int
    index: int
    c_in: int
    c_out: int
    stride: int

    @property
    def has_proj(self) -> bool:
        return self.stride > 1 or self.c_in != self.c_out

    @property
    def block_id(self) -> str:
        return f"G{self.group}.B{self.index}"


def encoder_blocks(arch: ArchConfig) -> List[BlockSpec]:
    blocks = []
    c_in = arch.c0_channels
    for g, width in enumerate(arch.group_widths, start=1):
        for b in range(arch.blocks_per_group):
            stride = arch.group_stride(g) if b == 0 else 1
            blocks.append(BlockSpec(f"g{g}.b{b}", g, b, c_in, width, stride))
            c_in = width
    return blocks


def encoder_convs(arch: ArchConfig) -> List[ConvSpec]:
    """Every encoder convolution, in forward order"""
    convs = [ConvSpec("c0", arch.c0_channels, arch.in_channels, 3, "c0")]
    for block in encoder_blocks(arch):
        unit = f"g{block.group}"
        convs.append(ConvSpec(f"{block.prefix}.conv1", block.c_out, block.c_in, 3, unit))
        convs.append(ConvSpec(f"{block.prefix}.conv2", block.c_out, block.c_out, 3, unit))
        if block.has_proj:
            convs.append(ConvSpec(f"{block.prefix}.proj", block.c_out, block.c_in, 1, unit))
    return convs


def bridge_layout(arch: ArchConfig, bridge: BridgeConfig) -> List[BridgeLayer]:
    """Bridged convolutions in forward order with their offsets in the alpha signal"""
    if "g2" in bridge.bridged_units and arch.num_groups < 2:
        raise ContractViolation("BridgeConfig bridges G2 but the encoder has a single group")
    layers = []
    offset = 0
    conv_index: Dict[str, int] = {}
    for conv in encoder_convs(arch):
        if conv.unit not in bridge.bridged_units:
            continue
        if conv.unit == "c0":
            tag = "C0"
        else:
            prefix, block = conv.name.split(".")[:2]
            key = f"{prefix}.{block}"
            conv_index[key] = conv_index.get(key, 0) + 1
            tag = f"{conv.unit.upper()}_B{block[1:]}_C{conv_index[key]}"
        layers.append(BridgeLayer(conv.name, conv.c_out, conv.c_out, offset, tag))
        offset += conv.c_out * conv.c_out
    return layers


def expected_param_count(arch: ArchConfig, bridge: BridgeConfig) -> int:
    """Closed-form number of trainable scalars for a configuration"""
    total = arch.c0_channels * arch.in_channels * 9
    for b in encoder_blocks(arch):
        total += 2 * b.c_in + b.c_out * b.c_in * 9 + 2 * b.c_out + b.c_out * b.c_out * 9
        if b.has_proj:
            total += b.c_out * b.c_in
    f = arch.feature_width
    total += 2 * f + f * arch.num_rotation_classes + arch.num_rotation_classes
    total += 2 * f + f * arch.num_classes + arch.num_classes
    d = sum(layer.size for layer in bridge_layout(arch, bridge))
    if bridge.enable_data_bridge:
        total += d
    if bridge.enable_signal_bridge:
        total += f * d + d
    return total


@dataclass
class Model:
    """
    SSDN model: registry plus the structure needed to run either path.

    With no bridge enabled, the main path reads the self-supervised filters
    directly (fully shared encoder).
    """

    arch: ArchConfig
    bridge: BridgeConfig
    registry: ParamRegistry
    bridge_layers: List[BridgeLayer] = field(default_factory=list)
    seed: int = 0

    @property
    def alpha_dim(self) -> int:
        return sum(layer.size for layer in self.bridge_layers)

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.registry.items()))[1].dtype

    @property
    def blocks(self) -> List[BlockSpec]:
        return encoder_blocks(self.arch)

    @property
    def block_ids(self) -> List[str]:
        """Activation / freeze units: C0, each group G{g}, each block G{g}.B{b}"""
        ids = ["C0"]
        for g in range(1, self.arch.num_groups + 1):
            ids.append(f"G{g}")
            ids.extend(f"G{g}.B{b}" for b in range(self.arch.blocks_per_group))
        return ids

    def block_param_names(self, block_id: str) -> List[str]:
        """Registry entries belonging to one C0 / group / block unit"""
        if block_id not in self.block_ids:
            raise ContractViolation(f"Unknown block id {block_id!r}; expected one of {self.block_ids}")
        if block_id == "C0":
            prefix = "c0."
        else:
            group, _, block = block_id.partition(".")
            prefix = f"g{group[1:]}." + (f"b{block[1:]}." if block else "")
        return [n for n in self.registry if n.startswith(prefix) and not n.endswith(".alpha_d")]

    def clone(self) -> "Model":
        return copy.deepcopy(self)

    def bind(self, tape, groups=None, overrides=None) -> Params:
        return bind_params(tape, self.registry, groups=groups, overrides=overrides)


def build_model(arch: ArchConfig, bridge: BridgeConfig, seed: int = 0, dtype=np.float32) -> Model:
    """
    Creates and initializes a model.

    Convolution and linear weights use Kaiming fan-in scaling, norm scales 1
    and shifts 0, every alpha_d the identity, and the alpha predictor zeros,
    so a fresh model computes exactly what the shared encoder computes.

    :param arch: Encoder shape
    :param bridge: Split / bridge selection
    :param seed: Initialization seed
    :param dtype: Parameter dtype (float64 for gradient checks)
    """
    layers = bridge_layout(arch, bridge)
    split = set(bridge.bridged_units)
    registry = ParamRegistry()

    def enc_group(unit: str) -> str:
        return ENCODER_SS if unit in split else ENCODER_SHARED

    def add_conv(conv: ConvSpec):
        fan_in = conv.c_in * conv.kernel * conv.kernel
        shape = (conv.c_out, conv.c_in, conv.kernel, conv.kernel)
        name = f"{conv.name}.weight"
        registry.add(name, kaiming_normal(param_rng(seed, name), shape, fan_in, dtype), enc_group(conv.unit))

    def add_norm(prefix: str, width: int, group: str):
        registry.add(f"{prefix}.gamma", np.ones(width, dtype=dtype), group)
        registry.add(f"{prefix}.beta", np.zeros(width, dtype=dtype), group)

    convs = {c.name: c for c in encoder_convs(arch)}
    add_conv(convs["c0"])
    for block in encoder_blocks(arch):
        unit = f"g{block.group}"
        add_norm(f"{block.prefix}.norm1", block.c_in, enc_group(unit))
        add_conv(convs[f"{block.prefix}.conv1"])
        add_norm(f"{block.prefix}.norm2", block.c_out, enc_group(unit))
        add_conv(convs[f"{block.prefix}.conv2"])
        if block.has_proj:
            add_conv(convs[f"{block.prefix}.proj"])

    if bridge.enable_data_bridge:
        for layer in layers:
            registry.add(layer.alpha_name, np.eye(layer.I, layer.J, dtype=dtype), BRIDGE_DATA)

    f = arch.feature_width
    add_norm("ss.norm", f, SS_HEAD)
    registry.add("ss.rot.weight", kaiming_normal(param_rng(seed, "ss.rot.weight"), (f, arch.num_rotation_classes), f, dtype), SS_HEAD)
    registry.add("ss.rot.bias", np.zeros(arch.num_rotation_classes, dtype=dtype), SS_HEAD)
    if bridge.enable_signal_bridge:
        d = sum(layer.size for layer in layers)
        registry.add("ss.alpha.weight", np.zeros((f, d), dtype=dtype), BRIDGE_PREDICTOR)
        registry.add("ss.alpha.bias", np.zeros(d, dtype=dtype), BRIDGE_PREDICTOR)
    add_norm("main.norm", f, MAIN_HEAD)
    registry.add("main.fc.weight", kaiming_normal(param_rng(seed, "main.fc.weight"), (f, arch.num_classes), f, dtype), MAIN_HEAD)
    registry.add("main.fc.bias", np.zeros(arch.num_classes, dtype=dtype), MAIN_HEAD)

    logger.debug("Built model with %d tensors / %d scalars (bridges %s)", len(registry), registry.count(), bridge.label)
    return Model(arch, bridge, registry, layers, seed)


def _encoder(
    model: Model,
    params: Params,
    x: Var,
    conv_weight: Callable[[str], Var],
    record: Optional[Dict[str, Var]] = None,
) -> Var:
    arch = model.arch
    out = ops.conv2d(x, conv_weight("c0"), stride=1, pad=1)
    if record is not None:
        record["C0"] = out
    for block in model.blocks:
        p = block.prefix
        handles = BlockParams(
            norm1_gamma=params[f"{p}.norm1.gamma"],
            norm1_beta=params[f"{p}.norm1.beta"],
            conv1=conv_weight(f"{p}.conv1"),
            norm2_gamma=params[f"{p}.norm2.gamma"],
            norm2_beta=params[f"{p}.norm2.beta"],
            conv2=conv_weight(f"{p}.conv2"),
            proj=conv_weight(f"{p}.proj") if block.has_proj else None,
        )
        out = residual_block_forward(x=out, block=handles, stride=block.stride, norm_groups=arch.norm_groups)
        if record is not None:
            record[block.block_id] = out
            if block.index == arch.blocks_per_group - 1:
                record[f"G{block.group}"] = out
    return out


def _pooled(model: Model, params: Params, prefix: str, features: Var) -> Var:
    normed = group_norm(features, model.arch.norm_groups, params[f"{prefix}.norm.gamma"], params[f"{prefix}.norm.beta"])
    return ops.global_avg_pool(ops.relu(normed))


def _params_for(model: Model, x: Var, params: Optional[Params]) -> Params:
    # Inference default: parameters enter the tape as constants
    return params if params is not None else model.bind(x.tape, groups=())


def forward_ss(
    model: Model, x: Var, params: Optional[Params] = None
) -> Tuple[Var, Optional[AlphaSignal]]:
    """
    Self-supervised path C0 -> E_s -> E_sm -> S.

    :param model: Model
    :param x: Input batch [N, C, H, W]
    :param params: Bound parameters (constants when omitted)
    :return: Tuple of rotation logits [N, 4] and the alpha signal
             (None when the signal bridge is disabled)
    """
    params = _params_for(model, x, params)
    features = _encoder(model, params, x, lambda name: params[f"{name}.weight"])
    pooled = _pooled(model, params, "ss", features)
    rotation_logits = ops.linear(pooled, params["ss.rot.weight"], params["ss.rot.bias"])
    alpha = None
    if model.bridge.enable_signal_bridge:
        flat = ops.linear(pooled, params["ss.alpha.weight"], params["ss.alpha.bias"])
        alpha = AlphaSignal(flat, list(model.bridge_layers))
    return rotation_logits, alpha


def _main_features(
    model: Model,
    params: Params,
    x: Var,
    alpha: Optional[AlphaSignal],
    record: Optional[Dict[str, Var]] = None,
) -> Var:
    if not model.bridge.enabled:
        return _encoder(model, params, x, lambda name: params[f"{name}.weight"], record)

    bridged = {layer.layer_name: layer for layer in model.bridge_layers}

    def weights_for(sample: Optional[int]) -> Callable[[str], Var]:
        cache: Dict[str, Var] = {}

        def conv_weight(name: str) -> Var:
            layer = bridged.get(name)
            if layer is None:
                return params[f"{name}.weight"]
            if name not in cache:
                cache[name] = bridge_weights(
                    layer,
                    params.get(layer.alpha_name),
                    alpha.layer(name, sample) if sample is not None else None,
                    params[layer.weight_name],
                )
            return cache[name]

        return conv_weight

    if alpha is None:
        return _encoder(model, params, x, weights_for(None), record)

    # every sample carries its own synthesized filters
    outputs = []
    records: List[Dict[str, Var]] = []
    for n in range(x.shape[0]):
        sample_record: Optional[Dict[str, Var]] = {} if record is not None else None
        outputs.append(_encoder(model, params, ops.slice(x, 0, n, 1), weights_for(n), sample_record))
        if sample_record is not None:
            records.append(sample_record)
    if record is not None:
        for key in records[0]:
            record[key] = ops.concat([r[key] for r in records], axis=0)
    return ops.concat(outputs, axis=0)


def forward_main(model: Model, x: Var, params: Optional[Params] = None) -> Var:
    """
    Main-task path, one differentiable pass.

    Runs the self-supervised path first to obtain the alpha signal (when the
    signal bridge is on), synthesizes the E_m filters, then runs
    C0 -> E_m -> E_sm -> M.

    :param model: Model
    :param x: Input batch [N, C, H, W]
    :param params: Bound parameters (constants when omitted)
    :return: Class logits [N, num_classes]
    """
    params = _params_for(model, x, params)
    alpha = forward_ss(model, x, params)[1] if model.bridge.enable_signal_bridge else None
    features = _main_features(model, params, x, alpha)
    pooled = _pooled(model, params, "main", features)
    return ops.linear(pooled, params["main.fc.weight"], params["main.fc.bias"])


def encoder_activations(
    model: Model, x: Var, path: str = "main", params: Optional[Params] = None
) -> Dict[str, Var]:
    """
    Outputs of C0, every block and every group along one path.

    :param path: "main" or "ss"
    """
    params = _params_for(model, x, params)
    record: Dict[str, Var] = {}
    if path == "ss":
        _encoder(model, params, x, lambda name: params[f"{name}.weight"], record)
    elif path == "main":
        alpha = forward_ss(model, x, params)[1] if model.bridge.enable_signal_bridge else None
        _main_features(model, params, x, alpha, record)
    else:
        raise ContractViolation(f"Unknown path {path!r}; expected 'main' or 'ss'")
    return record


def save_model(model: Model, path: Union[str, Path]) -> None:
    """Writes the model registry, ArchConfig and BridgeConfig to a checkpoint container"""
    save_checkpoint(path, model.registry, model.arch, {"bridge": model.bridge.to_dict(), "seed": model.seed})


def load_model(path: Union[str, Path]) -> Model:
    """
    Restores a model saved with save_model.

    :param path: Checkpoint file
    :return: Model with the stored parameters
    """
    registry, arch, extra = load_checkpoint(path)
    bridge = BridgeConfig.from_dict(extra.get("bridge", {}))
    seed = int(extra.get("seed", 0))
    dtype = next(iter(registry.items()))[1].dtype if len(registry) else np.float32
    expected = build_model(arch, bridge, seed, dtype)
    if registry.names() != expected.registry.names():
        missing = set(expected.registry.names()) ^ set(registry.names())
        raise ContractViolation(f"{path}: parameters do not match the stored configuration ({sorted(missing)[:5]})")
    for name in registry:
        if registry.group_of(name) != expected.registry.group_of(name):
            raise ContractViolation(f"{path}: {name!r} is stored in group {registry.group_of(name)!r}")
    return Model(arch, bridge, registry, expected.bridge_layers, seed)


def bridged_layers(model: Model) -> List[BridgeLayer]:
    """Bridged convolutions in forward order; tags read C0 or G{g}_B{i}_C{j}"""
    return list(model.bridge_layers)
