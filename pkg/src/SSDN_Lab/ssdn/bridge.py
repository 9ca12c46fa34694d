from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ..engine import Var, ops
from ..errors import ContractViolation


@dataclass(frozen=True)
class BridgeLayer:
    """
    One bridged convolution.

    Filter i of the derived (main) layer is a combination of the J filters of
    the self-supervised layer with the same name. The derived layer duplicates
    the source layer, so I == J.
    """

    layer_name: str  # conv prefix, e.g. "g1.b0.conv1"
    I: int
    J: int
    offset: int  # start of this layer's block inside the flattened alpha signal
    tag: str  # "C0" or "B{block}_C{conv}" inside its group

    @property
    def weight_name(self) -> str:
        return f"{self.layer_name}.weight"

    @property
    def alpha_name(self) -> str:
        return f"{self.layer_name}.alpha_d"

    @property
    def size(self) -> int:
        return self.I * self.J


@dataclass
class AlphaSignal:
    """Flattened signal-dependent coefficients [N, D] and their per-layer layout"""

    flat: Var
    layers: List[BridgeLayer]

    @property
    def batch_size(self) -> int:
        return self.flat.shape[0]

    def layer(self, name: str, sample: int) -> Var:
        """[I, J] coefficients of one layer for one sample"""
        for layer in self.layers:
            if layer.layer_name == name:
                row = ops.slice(self.flat, 0, sample, 1)
                block = ops.slice(row, 1, layer.offset, layer.size)
                return ops.reshape(block, (layer.I, layer.J))
        raise ContractViolation(f"No bridged layer named {name!r}")

    def values(self, name: Optional[str] = None) -> np.ndarray:
        """Numeric coefficients [N, D], or [N, I*J] of one layer"""
        if name is None:
            return self.flat.value.copy()
        for layer in self.layers:
            if layer.layer_name == name:
                return self.flat.value[:, layer.offset : layer.offset + layer.size].copy()
        raise ContractViolation(f"No bridged layer named {name!r}")

    def per_layer(self) -> Dict[str, np.ndarray]:
        return {layer.layer_name: self.values(layer.layer_name) for layer in self.layers}


def bridge_weights(
    layer: BridgeLayer,
    alpha_d: Optional[Var],
    alpha_s: Optional[Var],
    source_filters: Var,
) -> Var:
    """
    Synthesizes the derived filters w_i = sum_j (alpha_d[i, j] + alpha_s[i, j]) * source_j.

    A missing alpha (bridge disabled) contributes nothing. The result stays on
    the tape, so gradients reach both alphas and the source filters.

    :param layer: Bridged layer description
    :param alpha_d: Data-dependent coefficients [I, J] or None
    :param alpha_s: Signal-dependent coefficients [I, J] of one input, or None
    :param source_filters: Live filters of the self-supervised layer [J, C, kH, kW]
    :return: Derived filters [I, C, kH, kW]
    """
    if source_filters.ndim != 4 or source_filters.shape[0] != layer.J:
        raise ContractViolation(
            f"bridge {layer.layer_name}: source filters {source_filters.shape} do not have J={layer.J} filters"
        )
    for label, alpha in (("alpha_d", alpha_d), ("alpha_s", alpha_s)):
        if alpha is not None and alpha.shape != (layer.I, layer.J):
            raise ContractViolation(
                f"bridge {layer.layer_name}: {label} shape {alpha.shape}, expected {(layer.I, layer.J)}"
            )
    if alpha_d is None and alpha_s is None:
        raise ContractViolation(f"bridge {layer.layer_name}: no bridge coefficients supplied")
    if alpha_d is None:
        coefficients = alpha_s
    elif alpha_s is None:
        coefficients = alpha_d
    else:
        coefficients = ops.add(alpha_d, alpha_s)
    _, c, kh, kw = source_filters.shape
    bank = ops.reshape(source_filters, (layer.J, c * kh * kw))
    return ops.reshape(ops.matmul(coefficients, bank), (layer.I, c, kh, kw))
