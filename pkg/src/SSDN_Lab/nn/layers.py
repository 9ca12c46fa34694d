from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..engine import Var, ops
from ..errors import ContractViolation


def param_rng(seed: int, name: str) -> np.random.Generator:
    """
    Generator for one named parameter.

    Seeding by (seed, crc32(name)) makes initial values independent of
    registration order, so models that differ only in extra parameters
    share every common weight.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def group_norm(x: Var, num_groups: int, gamma: Var, beta: Var, eps: float = 1e-5) -> Var:
    """
    Per-sample, per-group standardization followed by a per-channel affine map.

    :param x: [N, C, H, W]
    :param num_groups: Groups dividing C
    :param gamma: Scale [C]
    :param beta: Shift [C]
    :param eps: Variance floor
    """
    if x.ndim != 4:
        raise ContractViolation(f"group_norm: input must be [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if num_groups < 1 or c % num_groups:
        raise ContractViolation(f"group_norm: C={c} is not divisible by num_groups={num_groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ContractViolation(f"group_norm: gamma {gamma.shape} / beta {beta.shape} do not match C={c}")

    xr = x.value.reshape(n, num_groups, -1)
    mu = xr.mean(axis=-1, keepdims=True)
    centered = xr - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv).reshape(n, c, h, w)
    gv = gamma.value[None, :, None, None]
    out = xhat * gv + beta.value[None, :, None, None]

    def _backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = (g * gv).reshape(n, num_groups, -1)
        xh = xhat.reshape(n, num_groups, -1)
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xh * (dxhat * xh).mean(axis=-1, keepdims=True)
        )
        return dx.reshape(n, c, h, w), dgamma, dbeta

    return x.tape.record("group_norm", [x, gamma, beta], out, _backward)


@dataclass
class BlockParams:
    """Tape handles of one residual block; conv weights may be synthesized"""

    norm1_gamma: Var
    norm1_beta: Var
    conv1: Var
    norm2_gamma: Var
    norm2_beta: Var
    conv2: Var
    proj: Optional[Var] = None


def residual_block_forward(x: Var, block: BlockParams, stride: int, norm_groups: int) -> Var:
    """
    Pre-activation block: norm -> relu -> conv3x3 -> norm -> relu -> conv3x3, plus skip.

    The skip is a 1x1 projection of the input when the block carries one.
    """
    out = ops.relu(group_norm(x, norm_groups, block.norm1_gamma, block.norm1_beta))
    out = ops.conv2d(out, block.conv1, stride=stride, pad=1)
    out = ops.relu(group_norm(out, norm_groups, block.norm2_gamma, block.norm2_beta))
    out = ops.conv2d(out, block.conv2, stride=1, pad=1)
    skip = x if block.proj is None else ops.conv2d(x, block.proj, stride=stride, pad=0)
    if skip.shape != out.shape:
        raise ContractViolation(
            f"residual block: skip shape {skip.shape} does not match residual shape {out.shape}"
        )
    return ops.add(out, skip)
