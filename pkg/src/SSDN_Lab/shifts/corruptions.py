"""
Deterministic covariate-shift corruptions.

Every kind works on float pixels in [0, 255]; apply_corruption rounds and
clamps the result back to uint8. Noise kinds draw from a PCG64 substream
keyed by (seed, image index), so a corrupted dataset is reproducible
regardless of the order or the worker images are processed on.
"""
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ContractViolation
from .datasets import ImageDataset

SEVERITY_TABLES: Dict[str, tuple] = {
    "gaussian_noise": (8.0, 13.0, 18.0, 26.0, 38.0),  # sigma in pixel levels (x/255 of range)
    "shot_noise": (60.0, 25.0, 12.0, 5.0, 3.0),  # photon count at full scale
    "impulse_noise": (0.03, 0.06, 0.09, 0.17, 0.27),  # fraction of flipped values
    "gaussian_blur": (0.4, 0.6, 0.9, 1.3, 1.8),  # sigma in pixels
    "brightness": (0.1, 0.2, 0.3, 0.4, 0.5),  # additive, fraction of 255
    "contrast": (0.75, 0.6, 0.45, 0.3, 0.2),  # scale about the image mean
    "pixelate": (0.8, 0.65, 0.5, 0.4, 0.3),  # downscale factor
}
KINDS = tuple(SEVERITY_TABLES)
_NOISE_KINDS = frozenset({"gaussian_noise", "shot_noise", "impulse_noise"})


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SEVERITY_TABLES:
            raise ContractViolation(f"Unknown corruption kind {self.kind!r}, expected one of {KINDS}")
        if isinstance(self.severity, bool) or not isinstance(self.severity, (int, np.integer)):
            raise ContractViolation(f"Corruption severity must be an int, got {self.severity!r}")
        if not 1 <= self.severity <= 5:
            raise ContractViolation(f"Corruption severity must be in 1..5, got {self.severity}")

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.severity}"

    @property
    def parameter(self) -> float:
        return SEVERITY_TABLES[self.kind][self.severity - 1]

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "severity": int(self.severity), "seed": int(self.seed)}


def corruption_rng(seed: int, index: int) -> np.random.Generator:
    """Per-image PCG64 substream"""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


def gaussian_noise(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return x + rng.normal(0.0, sigma, size=x.shape)


def shot_noise(x: np.ndarray, photons: float, rng: np.random.Generator) -> np.ndarray:
    return rng.poisson(x / 255.0 * photons) / photons * 255.0


def impulse_noise(x: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    flip = rng.random(x.shape) < fraction
    salt = rng.random(x.shape) < 0.5
    return np.where(flip, np.where(salt, 255.0, 0.0), x)


def gaussian_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    # channels are never mixed; truncate is in units of sigma
    return gaussian_filter(x, sigma=(0.0, sigma, sigma), mode="reflect", truncate=3.0)


def brightness(x: np.ndarray, amount: float) -> np.ndarray:
    return x + amount * 255.0


def contrast(x: np.ndarray, factor: float) -> np.ndarray:
    mean = x.mean()
    return (x - mean) * factor + mean


def _nearest(size: int, target: int) -> np.ndarray:
    return np.minimum(((np.arange(target) + 0.5) * size / target).astype(np.int64), size - 1)


def pixelate(x: np.ndarray, factor: float) -> np.ndarray:
    """Nearest-neighbour downscale by `factor` and back up to the input size"""
    _, h, w = x.shape
    sh, sw = max(1, int(round(h * factor))), max(1, int(round(w * factor)))
    small = x[:, _nearest(h, sh)][:, :, _nearest(w, sw)]
    return small[:, _nearest(sh, h)][:, :, _nearest(sw, w)]


_KIND_FUNCTIONS: Dict[str, Callable[..., np.ndarray]] = {
    "gaussian_noise": gaussian_noise,
    "shot_noise": shot_noise,
    "impulse_noise": impulse_noise,
    "gaussian_blur": gaussian_blur,
    "brightness": brightness,
    "contrast": contrast,
    "pixelate": pixelate,
}


def to_pixels(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def apply_corruption(image: np.ndarray, spec: CorruptionSpec, index: int = 0) -> np.ndarray:
    """
    Corrupts one image.

    :param image: uint8 [C, H, W]
    :param spec: Kind, severity, and seed
    :param index: Image index, selects the noise substream
    :return: uint8 [C, H, W]
    """
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3:
        raise ContractViolation(f"apply_corruption expects a uint8 [C,H,W] image, got {image.dtype} {image.shape}")
    x = image.astype(np.float64)
    function = _KIND_FUNCTIONS[spec.kind]
    if spec.kind in _NOISE_KINDS:
        out = function(x, spec.parameter, corruption_rng(spec.seed, index))
    else:
        out = function(x, spec.parameter)
    return to_pixels(out)


def corrupt_dataset(dataset: ImageDataset, spec: Optional[CorruptionSpec]) -> ImageDataset:
    """Corrupts every image of a dataset; None returns the clean dataset"""
    if spec is None:
        return dataset
    images = dataset.images.copy()
    for k in range(len(dataset)):
        images[k] = apply_corruption(dataset.images[k], spec, k)
    return ImageDataset(images, dataset.labels.copy(), f"{dataset.name}/{spec.name}", dataset.class_count)
