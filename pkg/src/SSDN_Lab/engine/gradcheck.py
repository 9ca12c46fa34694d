# Central-difference verification of backward rules
from typing import Callable

import numpy as np

from ..errors import ContractViolation
from .tape import Tape, Var, backward

GraphBuilder = Callable[[Var], Var]


def _evaluate(function: GraphBuilder, point: np.ndarray) -> float:
    tape = Tape(np.float64)
    out = function(tape.leaf(point))
    tape.check_finite()
    return float(out.value)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max coordinate-wise |a - b| / max(|a|, |b|, 1e-8)"""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def grad_check(function: GraphBuilder, point, epsilon: float = 1e-4) -> float:
    """
    Compares backward() against central differences, coordinate by coordinate.

    Evaluation always runs on 64-bit tapes.

    :param function: Builds a scalar graph from the Var placed at `point`
    :param point: Where to differentiate
    :param epsilon: Finite-difference step
    :return: Max relative error over all coordinates
    """
    if epsilon <= 0:
        raise ContractViolation(f"grad_check: epsilon must be positive, got {epsilon}")
    point = np.array(point, dtype=np.float64)

    tape = Tape(np.float64)
    x = tape.leaf(point, requires_grad=True, name="point")
    loss = function(x)
    if np.size(loss.value) != 1:
        raise ContractViolation(f"grad_check: graph output must be a scalar, got shape {np.shape(loss.value)}")
    tape.check_finite()
    analytic = backward(loss).of(x)
    if analytic is None:
        analytic = np.zeros_like(point)

    numeric = np.zeros_like(point)
    flat = numeric.reshape(-1)
    shifted = point.copy()
    shifted_flat = shifted.reshape(-1)
    for k in range(shifted_flat.size):
        original = shifted_flat[k]
        shifted_flat[k] = original + epsilon
        plus = _evaluate(function, shifted)
        shifted_flat[k] = original - epsilon
        minus = _evaluate(function, shifted)
        shifted_flat[k] = original
        flat[k] = (plus - minus) / (2.0 * epsilon)
    return relative_error(analytic, numeric)
