from __future__ import annotations

import itertools
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ContractViolation, NonFiniteError

# A backward rule maps the output gradient to one gradient (or None) per input
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_tape_ids = itertools.count()


class Var:
    """
    Handle to one value recorded on a Tape.

    A Var is only meaningful together with the tape that issued it.
    """

    __slots__ = ("tape", "node_id", "value", "requires_grad", "name")

    def __init__(
        self,
        tape: "Tape",
        node_id: int,
        value: np.ndarray,
        requires_grad: bool,
        name: Optional[str] = None,
    ):
        self.tape = tape
        self.node_id = node_id
        self.value = value
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var(#{self.node_id}{label}, shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar, dispatched to the op family
    def __add__(self, other: "Var") -> "Var":
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other: "Var") -> "Var":
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other: Union["Var", float]) -> "Var":
        from . import ops

        if isinstance(other, Var):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Var":
        from . import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other: "Var") -> "Var":
        from . import ops

        return ops.matmul(self, other)


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: Tuple[int, ...], output: int, backward: Optional[BackwardRule]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """
    Append-only record of operations for reverse-mode differentiation.

    Every value entering the tape is cast to the tape dtype (float32 by default,
    float64 for gradient checks).
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ContractViolation(f"Unsupported tape dtype: {self.dtype}")
        self.tape_id = next(_tape_ids)
        self.nodes: List[_Node] = []
        self.vars: List[Var] = []

    def __len__(self) -> int:
        return len(self.vars)

    def leaf(self, value, requires_grad: bool = False, name: Optional[str] = None) -> Var:
        """
        Records a leaf value (input, parameter or constant).

        :param value: Array-like value, copied and cast to the tape dtype
        :param requires_grad: Whether backward() should produce a gradient for it
        :param name: Optional label shown in diagnostics
        :return: Var handle
        """
        array = np.array(value, dtype=self.dtype, copy=True)
        var = Var(self, len(self.vars), array, requires_grad, name)
        self.vars.append(var)
        self.nodes.append(_Node("leaf", (), var.node_id, None))
        return var

    def record(
        self,
        op: str,
        inputs: Sequence[Var],
        value: np.ndarray,
        backward: BackwardRule,
    ) -> Var:
        """
        Records the output of an operation.

        The output requires a gradient when any input does; otherwise the
        backward rule is dropped.
        """
        for var in inputs:
            if var.tape is not self:
                raise ContractViolation(f"{op}: input {var!r} belongs to another tape")
        requires_grad = any(v.requires_grad for v in inputs)
        value = np.asarray(value, dtype=self.dtype)
        var = Var(self, len(self.vars), value, requires_grad)
        self.vars.append(var)
        self.nodes.append(
            _Node(
                op,
                tuple(v.node_id for v in inputs),
                var.node_id,
                backward if requires_grad else None,
            )
        )
        return var

    def op_name(self, node_id: int) -> str:
        return self.nodes[node_id].op

    def check_finite(self) -> None:
        """Raises NonFiniteError naming the first node holding NaN or infinity"""
        for node, var in zip(self.nodes, self.vars):
            if not np.all(np.isfinite(var.value)):
                raise NonFiniteError(var.node_id, node.op)


class Gradients(Mapping[int, np.ndarray]):
    """Mapping from node id to gradient, same shape as the node's value."""

    def __init__(self, tape: Tape, grads: Dict[int, np.ndarray]):
        self.tape = tape
        self._grads = grads

    def __getitem__(self, key: Union[int, Var]) -> np.ndarray:
        return self._grads[self._key(key)]

    def __contains__(self, key) -> bool:
        if isinstance(key, Var):
            return key.tape is self.tape and key.node_id in self._grads
        return key in self._grads

    def __iter__(self) -> Iterator[int]:
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)

    def of(self, var: Var) -> Optional[np.ndarray]:
        """Gradient of a Var, or None when the loss does not depend on it"""
        return self._grads.get(self._key(var))

    def _key(self, key: Union[int, Var]) -> int:
        if isinstance(key, Var):
            if key.tape is not self.tape:
                raise ContractViolation(f"{key!r} belongs to another tape")
            return key.node_id
        return key


def backward(loss: Var) -> Gradients:
    """
    Reverse-mode accumulation from a scalar loss.

    Only nodes with requires_grad get gradients. Nodes the loss does not
    depend on are absent from the result.

    :param loss: Scalar Var
    :return: Gradients keyed by node id
    """
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise ContractViolation(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    grads: Dict[int, np.ndarray] = {}
    if not loss.requires_grad:
        return Gradients(tape, grads)
    grads[loss.node_id] = np.ones_like(loss.value)
    for node in reversed(tape.nodes[: loss.node_id + 1]):
        grad = grads.get(node.output)
        if grad is None or node.backward is None:
            continue
        input_grads = node.backward(grad)
        for input_id, input_grad in zip(node.inputs, input_grads):
            if input_grad is None or not tape.vars[input_id].requires_grad:
                continue
            input_grad = np.asarray(input_grad, dtype=tape.dtype)
            if input_grad.shape != tape.vars[input_id].shape:
                raise ContractViolation(
                    f"{node.op}: gradient shape {input_grad.shape} does not match "
                    f"input shape {tape.vars[input_id].shape}"
                )
            if input_id in grads:
                grads[input_id] = grads[input_id] + input_grad
            else:
                grads[input_id] = input_grad
    return Gradients(tape, grads)
