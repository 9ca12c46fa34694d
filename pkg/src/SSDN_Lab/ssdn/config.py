from dataclasses import dataclass, asdict, fields
from typing import Any, Dict, Tuple

from ..errors import ContractViolation

# Encoder units that can be split into a self-supervised copy and a derived main copy
BRIDGEABLE_UNITS = ("c0", "g1", "g2")


@dataclass(frozen=True)
class BridgeConfig:
    """
    Which encoder units are split and which bridges synthesize the main copy.

    With both bridges disabled the encoder is fully shared (joint training).
    """

    bridge_c0: bool = False
    bridge_g1: bool = True
    bridge_g2: bool = False
    enable_data_bridge: bool = True
    enable_signal_bridge: bool = True

    def __post_init__(self):
        for f in fields(self):
            if not isinstance(getattr(self, f.name), bool):
                raise ContractViolation(f"BridgeConfig.{f.name} must be a boolean")
        if self.enabled and not any(self.flags):
            raise ContractViolation("BridgeConfig: a bridge is enabled but no unit (c0/g1/g2) is flagged")

    @property
    def enabled(self) -> bool:
        return self.enable_data_bridge or self.enable_signal_bridge

    @property
    def flags(self) -> Tuple[bool, bool, bool]:
        return self.bridge_c0, self.bridge_g1, self.bridge_g2

    @property
    def bridged_units(self) -> Tuple[str, ...]:
        """Units with separate E_s / E_m copies; empty when no bridge is enabled"""
        if not self.enabled:
            return ()
        return tuple(u for u, flag in zip(BRIDGEABLE_UNITS, self.flags) if flag)

    @property
    def label(self) -> str:
        """Flag row as written in the ablation table, e.g. '0/1/0'"""
        return "/".join(str(int(f)) for f in self.flags)

    @classmethod
    def shared(cls) -> "BridgeConfig":
        """Unsplit encoder (joint training architecture)"""
        return cls(False, False, False, False, False)

    @classmethod
    def ablation_rows(cls) -> Tuple["BridgeConfig", ...]:
        """The seven non-empty C0/G1/G2 flag combinations, both bridges on"""
        rows = []
        for c0 in (False, True):
            for g1 in (False, True):
                for g2 in (False, True):
                    if c0 or g1 or g2:
                        rows.append(cls(c0, g1, g2, True, True))
        return tuple(rows)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "BridgeConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractViolation(f"BridgeConfig: unknown keys {sorted(unknown)}")
        return cls(**d)
