from dataclasses import dataclass, asdict, fields
from typing import Any, Dict, Tuple

from ..errors import ContractViolation


@dataclass(frozen=True)
class ArchConfig:
    """
    Shape of the pre-activation residual encoder.

    C0 convolution, then `num_groups` groups of `blocks_per_group` residual
    blocks. Group 1 keeps the spatial size, every later group halves it.
    """

    c0_channels: int = 8
    num_groups: int = 4
    blocks_per_group: int = 1
    group_widths: Tuple[int, ...] = (8, 16, 16, 32)
    num_classes: int = 4
    num_rotation_classes: int = 4
    norm_groups: int = 4
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "group_widths", tuple(int(w) for w in self.group_widths))
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            if f.name == "group_widths":
                continue
            value = getattr(self, f.name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ContractViolation(f"ArchConfig.{f.name} must be a positive integer, got {value!r}")
        if len(self.group_widths) != self.num_groups:
            raise ContractViolation(
                f"ArchConfig.group_widths has {len(self.group_widths)} entries for num_groups={self.num_groups}"
            )
        if any(w < 1 for w in self.group_widths):
            raise ContractViolation(f"ArchConfig.group_widths must be positive, got {self.group_widths}")
        for width in (self.c0_channels,) + self.group_widths:
            if width % self.norm_groups:
                raise ContractViolation(
                    f"ArchConfig: width {width} is not divisible by norm_groups={self.norm_groups}"
                )

    def group_stride(self, group: int) -> int:
        """Stride of the first block of a 1-based group"""
        return 1 if group == 1 else 2

    @property
    def feature_width(self) -> int:
        return self.group_widths[-1]

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["group_widths"] = list(self.group_widths)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractViolation(f"ArchConfig: unknown keys {sorted(unknown)}")
        return cls(**d)
