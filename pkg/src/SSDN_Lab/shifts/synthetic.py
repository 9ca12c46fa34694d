# Desk-scale stand-in for CIFAR-10: one shape per image over a vertical brightness gradient
from dataclasses import dataclass, asdict, fields
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..errors import ContractViolation
from .datasets import ImageDataset

SHAPES = ("square", "cross", "disc", "triangle")


@dataclass(frozen=True)
class SyntheticSpec:
    """
    The background is dark at the bottom and bright at the top, so the
    rotation angle of an image is recoverable, while the class (the shape
    kind) does not depend on orientation.
    """

    image_side: int = 16
    class_count: int = 4
    samples_per_class: int = 500
    channels: int = 3
    shape_kinds: Tuple[str, ...] = SHAPES
    shape_size: Optional[int] = None  # image_side // 2 when unset
    gradient_top: float = 140.0
    gradient_bottom: float = 20.0
    gradient_jitter: float = 15.0
    foreground: float = 235.0

    def __post_init__(self):
        object.__setattr__(self, "shape_kinds", tuple(self.shape_kinds))
        for name in ("image_side", "class_count", "samples_per_class", "channels"):
            if int(getattr(self, name)) < 1:
                raise ContractViolation(f"SyntheticSpec.{name} must be positive")
        unknown = set(self.shape_kinds) - set(SHAPES)
        if unknown:
            raise ContractViolation(f"SyntheticSpec.shape_kinds: unknown shapes {sorted(unknown)}")
        if self.class_count > len(self.shape_kinds):
            raise ContractViolation(
                f"SyntheticSpec: {self.class_count} classes but only {len(self.shape_kinds)} shape kinds"
            )
        if not 2 <= self.size <= self.image_side:
            raise ContractViolation(f"SyntheticSpec: shape size {self.size} does not fit a {self.image_side}px canvas")

    @property
    def size(self) -> int:
        return self.shape_size if self.shape_size is not None else self.image_side // 2

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["shape_kinds"] = list(self.shape_kinds)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SyntheticSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractViolation(f"SyntheticSpec: unknown keys {sorted(unknown)}")
        return cls(**d)


def shape_mask(kind: str, size: int) -> np.ndarray:
    """Boolean [size, size] mask of one shape kind"""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    c = size / 2.0
    if kind == "square":
        return np.ones((size, size), dtype=bool)
    if kind == "cross":
        arm = size / 5.0
        return (np.abs(xx - c) < arm) | (np.abs(yy - c) < arm)
    if kind == "disc":
        return (xx - c) ** 2 + (yy - c) ** 2 <= c * c
    if kind == "triangle":
        half_width = yy / size * c
        return np.abs(xx - c) <= half_width
    raise ContractViolation(f"Unknown shape kind {kind!r}")


def gen_synthetic(spec: SyntheticSpec, seed: int, name: str = "synthetic") -> ImageDataset:
    """
    Generates a class-balanced dataset.

    :param spec: Generator parameters
    :param seed: Seed; equal seeds give bitwise-equal datasets
    :param name: Dataset name
    """
    rng = np.random.default_rng(seed)
    side, size = spec.image_side, spec.size
    n = spec.class_count * spec.samples_per_class
    labels = np.repeat(np.arange(spec.class_count), spec.samples_per_class)
    labels = labels[rng.permutation(n)]
    masks = [shape_mask(kind, size) for kind in spec.shape_kinds[: spec.class_count]]
    rows = np.arange(side, dtype=np.float64)[:, None] / max(side - 1, 1)

    images = np.empty((n, spec.channels, side, side), dtype=np.uint8)
    for k in range(n):
        top = spec.gradient_top + rng.uniform(-spec.gradient_jitter, spec.gradient_jitter)
        bottom = spec.gradient_bottom + rng.uniform(-spec.gradient_jitter, spec.gradient_jitter)
        canvas = np.broadcast_to(top + (bottom - top) * rows, (side, side)).copy()
        oy, ox = rng.integers(0, side - size + 1, size=2)
        patch = canvas[oy : oy + size, ox : ox + size]
        patch[masks[labels[k]]] = spec.foreground
        images[k] = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)[None]
    return ImageDataset(images, labels, name, spec.class_count)
