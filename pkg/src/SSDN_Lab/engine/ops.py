# Differentiable operations recorded on a Tape.
# No broadcasting except scalar-times-tensor: every other shape mismatch is a ContractViolation.
from __future__ import annotations

import builtins
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractViolation
from .tape import Var


def _same_shape(op: str, a: Var, b: Var) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _is_scalar(v: Var) -> bool:
    return v.value.ndim == 0


def add(a: Var, b: Var) -> Var:
    _same_shape("add", a, b)
    return a.tape.record("add", [a, b], a.value + b.value, lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    _same_shape("sub", a, b)
    return a.tape.record("sub", [a, b], a.value - b.value, lambda g: (g, -g))


def mul(a: Var, b: Var) -> Var:
    """Elementwise product; either side may be a 0-d scalar"""
    av, bv = a.value, b.value
    if _is_scalar(a) and not _is_scalar(b):
        return mul(b, a)
    if _is_scalar(b) and not _is_scalar(a):
        return a.tape.record(
            "mul_scalar",
            [a, b],
            av * bv,
            lambda g: (g * bv, np.sum(g * av).reshape(())),
        )
    _same_shape("mul", a, b)
    return a.tape.record("mul", [a, b], av * bv, lambda g: (g * bv, g * av))


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return a.tape.record("scale", [a], a.value * c, lambda g: (g * c,))


def relu(a: Var) -> Var:
    # subgradient 0 at exactly 0
    mask = a.value > 0
    return a.tape.record("relu", [a], np.where(mask, a.value, 0), lambda g: (g * mask,))


def sum(a: Var) -> Var:
    shape = a.shape
    return a.tape.record(
        "sum",
        [a],
        np.sum(a.value).reshape(()),
        lambda g: (np.broadcast_to(g, shape).copy(),),
    )


def mean(a: Var) -> Var:
    shape, size = a.shape, a.value.size
    return a.tape.record(
        "mean",
        [a],
        np.mean(a.value).reshape(()),
        lambda g: (np.broadcast_to(g / size, shape).copy(),),
    )


def reshape(a: Var, shape: Sequence[int]) -> Var:
    original = a.shape
    try:
        value = a.value.reshape(tuple(shape))
    except ValueError:
        raise ContractViolation(f"reshape: cannot view {original} as {tuple(shape)}")
    return a.tape.record("reshape", [a], value, lambda g: (g.reshape(original),))


def concat(vars: Sequence[Var], axis: int = 0) -> Var:
    if len(vars) == 0:
        raise ContractViolation("concat: no inputs")
    first = vars[0]
    for v in vars[1:]:
        if v.ndim != first.ndim or any(
            d1 != d2 for k, (d1, d2) in enumerate(zip(v.shape, first.shape)) if k != axis % first.ndim
        ):
            raise ContractViolation(f"concat: shape mismatch {first.shape} vs {v.shape} off axis {axis}")
    sizes = [v.shape[axis] for v in vars]
    bounds = np.cumsum(sizes)[:-1]
    value = np.concatenate([v.value for v in vars], axis=axis)
    return first.tape.record(
        "concat", list(vars), value, lambda g: tuple(np.split(g, bounds, axis=axis))
    )


def slice(a: Var, axis: int, start: int, length: int) -> Var:
    """`length` entries along `axis`, beginning at `start`"""
    extent = a.shape[axis]
    if start < 0 or length < 1 or start + length > extent:
        raise ContractViolation(f"slice: [{start}, {start + length}) outside axis {axis} of extent {extent}")
    index = [builtins.slice(None)] * a.ndim
    index[axis] = builtins.slice(start, start + length)
    index = tuple(index)
    shape = a.shape

    def _backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return a.tape.record("slice", [a], a.value[index], _backward)


narrow = slice


def global_avg_pool(a: Var) -> Var:
    """[N, C, H, W] -> [N, C]"""
    if a.ndim != 4:
        raise ContractViolation(f"global_avg_pool: expected [N,C,H,W], got {a.shape}")
    n, c, h, w = a.shape
    value = a.value.reshape(n, c, h * w).mean(axis=-1)

    def _backward(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], (n, c, h, w)).copy(),)

    return a.tape.record("global_avg_pool", [a], value, _backward)


def matmul(a: Var, b: Var) -> Var:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return a.tape.record("matmul", [a, b], av @ bv, lambda g: (g @ bv.T, av.T @ g))


def linear(x: Var, weight: Var, bias: Optional[Var] = None) -> Var:
    """
    Affine map x @ weight + bias, bias added to every row.

    :param x: [N, F]
    :param weight: [F, O]
    :param bias: [O] or None
    """
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ContractViolation(f"linear: input {x.shape} does not match weight {weight.shape}")
    xv, wv = x.value, weight.value
    out = xv @ wv
    if bias is None:
        return x.tape.record("linear", [x, weight], out, lambda g: (g @ wv.T, xv.T @ g))
    if bias.shape != (wv.shape[1],):
        raise ContractViolation(f"linear: bias shape {bias.shape}, expected ({wv.shape[1]},)")
    return x.tape.record(
        "linear",
        [x, weight, bias],
        out + bias.value,
        lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)),
    )


def _im2col(x_pad: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = x_pad.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x_pad.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x_pad[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(
    dcols: np.ndarray, padded_shape: Tuple[int, ...], kh: int, kw: int, stride: int, oh: int, ow: int
) -> np.ndarray:
    n, c = padded_shape[:2]
    dcols = dcols.reshape(n, c, kh, kw, oh, ow)
    dx_pad = np.zeros(padded_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx_pad[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += dcols[:, :, i, j]
    return dx_pad


def conv2d(x: Var, weight: Var, bias: Optional[Var] = None, stride: int = 1, pad: int = 0) -> Var:
    """
    2-D cross-correlation via im2col.

    The weight may be any graph node (e.g. filters synthesized by a bridge);
    its gradient is a regular edge of the tape. Samples are processed one at a
    time so a batched call and per-sample calls share arithmetic order.

    :param x: Input [N, C_in, H, W]
    :param weight: Filters [C_out, C_in, kH, kW]
    :param bias: Optional [C_out]
    :param stride: Stride >= 1
    :param pad: Zero padding on each border
    :return: [N, C_out, H', W'], H' = (H + 2*pad - kH) // stride + 1
    """
    if x.ndim != 4:
        raise ContractViolation(f"conv2d: input must be [N,C,H,W], got {x.shape}")
    if weight.ndim != 4:
        raise ContractViolation(f"conv2d: weight must be [C_out,C_in,kH,kW], got {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, w_in, kh, kw = weight.shape
    if w_in != c_in:
        raise ContractViolation(f"conv2d: input has C_in={c_in} but weight expects C_in={w_in}")
    if stride < 1 or pad < 0:
        raise ContractViolation(f"conv2d: invalid stride={stride} / pad={pad}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ContractViolation(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    if bias is not None and bias.shape != (c_out,):
        raise ContractViolation(f"conv2d: bias shape {bias.shape}, expected ({c_out},)")

    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    x_pad = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.value
    cols = _im2col(x_pad, kh, kw, stride, oh, ow)
    wmat = weight.value.reshape(c_out, -1)
    out = np.empty((n, c_out, oh * ow), dtype=x.value.dtype)
    for k in range(n):
        out[k] = wmat @ cols[k]
    if bias is not None:
        out += bias.value[None, :, None]
    out = out.reshape(n, c_out, oh, ow)
    padded_shape = x_pad.shape

    def _backward(g):
        gm = g.reshape(n, c_out, oh * ow)
        dw = np.zeros_like(wmat)
        dcols = np.empty_like(cols)
        for k in range(n):
            dw += gm[k] @ cols[k].T
            dcols[k] = wmat.T @ gm[k]
        dx = _col2im(dcols, padded_shape, kh, kw, stride, oh, ow)
        if pad:
            dx = dx[:, :, pad : pad + h, pad : pad + w]
        grads = [dx, dw.reshape(weight.shape)]
        if bias is not None:
            grads.append(gm.sum(axis=(0, 2)))
        return grads

    inputs = [x, weight] if bias is None else [x, weight, bias]
    return x.tape.record("conv2d", inputs, out, _backward)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Var, labels: Sequence[int]) -> Var:
    """
    Mean negative log-likelihood of the labels under softmax(logits).

    :param logits: [N, C]
    :param labels: N class indices in [0, C)
    :return: Scalar Var
    """
    if logits.ndim != 2:
        raise ContractViolation(f"softmax_cross_entropy: logits must be [N,C], got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ContractViolation(f"softmax_cross_entropy: {labels.shape[0]} labels for {n} rows")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ContractViolation(f"softmax_cross_entropy: labels outside [0, {c})")
    logp = log_softmax(logits.value)
    rows = np.arange(n)
    loss = -np.mean(logp[rows, labels])

    def _backward(g):
        probs = np.exp(logp)
        probs[rows, labels] -= 1.0
        return (probs * (g / n),)

    return logits.tape.record("softmax_cross_entropy", [logits], np.asarray(loss).reshape(()), _backward)
