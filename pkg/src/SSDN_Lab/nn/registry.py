# Named parameter store with group tags, snapshots and tape binding
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterable, Iterator, List, Mapping, Optional, Set, Tuple

import numpy as np

from ..engine import Gradients, Tape, Var
from ..errors import ContractViolation

if TYPE_CHECKING:
    from .optim import SGDState

ENCODER_SHARED = "encoder_shared"
ENCODER_SS = "encoder_ss"
ENCODER_MAIN_DERIVED = "encoder_main_derived"
SS_HEAD = "ss_head"
MAIN_HEAD = "main_head"
BRIDGE_DATA = "bridge_data"
BRIDGE_PREDICTOR = "bridge_predictor"

GROUPS = (
    ENCODER_SHARED,
    ENCODER_SS,
    ENCODER_MAIN_DERIVED,
    SS_HEAD,
    MAIN_HEAD,
    BRIDGE_DATA,
    BRIDGE_PREDICTOR,
)


def check_groups(groups: Iterable[str]) -> Set[str]:
    groups = set(groups)
    unknown = groups - set(GROUPS)
    if unknown:
        raise ContractViolation(f"Unknown parameter groups: {sorted(unknown)}")
    return groups


class ParamRegistry:
    """
    Ordered map name -> (value, group).

    Derived main-branch filters are synthesized on the tape and never
    registered, so `encoder_main_derived` stays empty of trainable leaves.
    """

    def __init__(self):
        self._values: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._groups: Dict[str, str] = {}

    def add(self, name: str, value: np.ndarray, group: str) -> None:
        if name in self._values:
            raise ContractViolation(f"Parameter {name!r} is already registered")
        if group not in GROUPS:
            raise ContractViolation(f"Unknown parameter group {group!r} for {name!r}")
        if group == ENCODER_MAIN_DERIVED:
            raise ContractViolation(f"{name!r}: {ENCODER_MAIN_DERIVED} holds no trainable leaves")
        self._values[name] = np.array(value, copy=True)
        self._groups[name] = group

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._values:
            raise ContractViolation(f"Unknown parameter {name!r}")
        current = self._values[name]
        value = np.asarray(value)
        if value.shape != current.shape:
            raise ContractViolation(f"{name!r}: shape {value.shape} does not match {current.shape}")
        self._values[name] = value.astype(current.dtype, copy=True)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def names(self, groups: Optional[Iterable[str]] = None) -> List[str]:
        if groups is None:
            return list(self._values)
        groups = check_groups(groups)
        return [n for n in self._values if self._groups[n] in groups]

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self._values.items())

    def count(self, groups: Optional[Iterable[str]] = None) -> int:
        """Number of scalars, optionally restricted to groups"""
        return int(sum(self._values[n].size for n in self.names(groups)))

    def copy(self) -> "ParamRegistry":
        other = ParamRegistry()
        for name, value in self._values.items():
            other.add(name, value, self._groups[name])
        return other

    def equals(self, other: "ParamRegistry") -> bool:
        """Bitwise equality of names, groups, dtypes and values"""
        if list(self._values) != list(other._values):
            return False
        for name, value in self._values.items():
            theirs = other._values[name]
            if self._groups[name] != other._groups[name] or value.dtype != theirs.dtype:
                return False
            if value.tobytes() != theirs.tobytes():
                return False
        return True


@dataclass
class Snapshot:
    """Deep copies of selected registry entries and their momentum buffers"""

    values: Dict[str, np.ndarray]
    buffers: Dict[str, Optional[np.ndarray]] = field(default_factory=dict)
    has_state: bool = False


def snapshot(
    registry: ParamRegistry, groups: Iterable[str], state: Optional["SGDState"] = None
) -> Snapshot:
    """
    Copies the entries of the given groups.

    :param registry: Registry to copy from
    :param groups: Group tags selecting entries
    :param state: Optimizer whose buffers for those entries are captured too
    """
    names = registry.names(groups)
    values = {n: registry[n].copy() for n in names}
    buffers: Dict[str, Optional[np.ndarray]] = {}
    if state is not None:
        for n in names:
            buf = state.buffers.get(n)
            buffers[n] = None if buf is None else buf.copy()
    return Snapshot(values, buffers, state is not None)


def restore(registry: ParamRegistry, snap: Snapshot, state: Optional["SGDState"] = None) -> None:
    """Writes the snapshot back, bitwise, including captured momentum buffers"""
    for name, value in snap.values.items():
        if name not in registry:
            raise ContractViolation(f"Snapshot entry {name!r} is not in the registry")
        if registry[name].shape != value.shape:
            raise ContractViolation(
                f"Snapshot entry {name!r} has shape {value.shape}, registry has {registry[name].shape}"
            )
    for name, value in snap.values.items():
        registry[name] = value
    if state is not None and snap.has_state:
        for name, buf in snap.buffers.items():
            if buf is None:
                state.buffers.pop(name, None)
            else:
                state.buffers[name] = buf.copy()


def bind_params(
    tape: Tape,
    registry: ParamRegistry,
    groups: Optional[Iterable[str]] = None,
    overrides: Optional[Mapping[str, Var]] = None,
) -> Dict[str, Var]:
    """
    Places every registry entry on a tape.

    :param tape: Target tape
    :param registry: Parameters
    :param groups: Only these groups require gradients (all when None)
    :param overrides: Vars to use instead of fresh leaves, e.g. a gradient-check point
    :return: name -> Var
    """
    trainable = set(registry.names(groups))
    overrides = overrides or {}
    bound: Dict[str, Var] = {}
    for name, value in registry.items():
        if name in overrides:
            bound[name] = overrides[name]
        else:
            bound[name] = tape.leaf(value, requires_grad=name in trainable, name=name)
    return bound


def named_grads(grads: Gradients, bound: Mapping[str, Var]) -> Dict[str, np.ndarray]:
    """Gradients of bound parameters, keyed by name; absent entries are omitted"""
    out = {}
    for name, var in bound.items():
        g = grads.of(var) if var.tape is grads.tape else None
        if g is not None:
            out[name] = g
    return out
