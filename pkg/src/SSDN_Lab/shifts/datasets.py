# Image datasets and bit-exact readers for the CIFAR-10 binary and MNIST IDX formats
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import zoom

from ..errors import ContractViolation, FormatError

CIFAR_SHAPE = (3, 32, 32)
CIFAR_CLASSES = 10
MNIST_IMAGE_MAGIC = 0x00000803
MNIST_LABEL_MAGIC = 0x00000801

PathLike = Union[str, Path]


@dataclass
class ImageDataset:
    """
    Labeled 8-bit images.

    :param images: uint8 array [N, C, H, W]
    :param labels: int64 array [N], each < class_count
    """

    images: np.ndarray
    labels: np.ndarray
    name: str
    class_count: int

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.dtype != np.uint8:
            raise ContractViolation(f"{self.name}: images must be uint8, got {self.images.dtype}")
        if self.images.ndim != 4:
            raise ContractViolation(f"{self.name}: images must be [N,C,H,W], got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ContractViolation(
                f"{self.name}: {self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ContractViolation(f"{self.name}: labels outside [0, {self.class_count})")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: Sequence[int], name: str = None) -> "ImageDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return ImageDataset(self.images[indices], self.labels[indices], name or self.name, self.class_count)

    def split(self, first: int) -> Tuple["ImageDataset", "ImageDataset"]:
        """Splits into the first `first` samples and the rest"""
        if not 0 <= first <= len(self):
            raise ContractViolation(f"{self.name}: cannot split {len(self)} samples at {first}")
        idx = np.arange(len(self))
        return self.subset(idx[:first]), self.subset(idx[first:])

    def as_channels(self, channels: int) -> "ImageDataset":
        """Replicates single-channel images to `channels` channels"""
        c = self.images.shape[1]
        if c == channels:
            return self
        if c != 1:
            raise ContractViolation(f"{self.name}: cannot map {c} channels to {channels}")
        images = np.repeat(self.images, channels, axis=1)
        return ImageDataset(images, self.labels.copy(), self.name, self.class_count)

    def resized(self, height: int, width: int) -> "ImageDataset":
        """Bilinear resampling of every image to [C, height, width]"""
        if height < 1 or width < 1:
            raise ContractViolation(f"{self.name}: cannot resize to {height}x{width}")
        n, c, h, w = self.images.shape
        if (h, w) == (height, width):
            return self
        if n == 0:
            return ImageDataset(np.zeros((0, c, height, width), dtype=np.uint8), self.labels, self.name, self.class_count)
        x = self.images.astype(np.float64)
        out = zoom(x, (1.0, 1.0, height / h, width / w), order=1, mode="nearest", grid_mode=True)
        images = np.clip(np.rint(out), 0, 255).astype(np.uint8)
        return ImageDataset(images, self.labels.copy(), self.name, self.class_count)


def to_inputs(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Maps uint8 pixels to [-1, 1]"""
    return (np.asarray(images, dtype=np.float64) / 127.5 - 1.0).astype(dtype)


def load_cifar10_binary(
    path: PathLike,
    image_shape: Tuple[int, int, int] = CIFAR_SHAPE,
    class_count: int = CIFAR_CLASSES,
) -> ImageDataset:
    """
    Reads a CIFAR-10 binary batch.

    Each record is one label byte followed by the pixels channel-major
    (1024 R, 1024 G, 1024 B for 32x32 images), rows in order.

    :param path: Batch file
    :param image_shape: Record image shape; other shapes read CIFAR-style exports
    :param class_count: Labels must be below this
    """
    data = Path(path).read_bytes()
    pixels = int(np.prod(image_shape))
    record = 1 + pixels
    if len(data) == 0 or len(data) % record:
        raise FormatError(f"{path}: size {len(data)} is not a multiple of the {record}-byte record")
    table = np.frombuffer(data, dtype=np.uint8).reshape(-1, record)
    labels = table[:, 0].astype(np.int64)
    if labels.max() >= class_count:
        raise FormatError(f"{path}: label {int(labels.max())} is not below {class_count}")
    images = table[:, 1:].reshape((-1,) + tuple(image_shape)).copy()
    return ImageDataset(images, labels, Path(path).name, class_count)


def save_cifar10_binary(dataset: ImageDataset, path: PathLike) -> None:
    """Writes a dataset in the CIFAR-10 binary record layout"""
    if dataset.class_count > 256:
        raise ContractViolation("CIFAR-style records hold one label byte")
    n = len(dataset)
    table = np.empty((n, 1 + int(np.prod(dataset.image_shape))), dtype=np.uint8)
    table[:, 0] = dataset.labels
    table[:, 1:] = dataset.images.reshape(n, -1)
    Path(path).write_bytes(table.tobytes())


def _read_idx(path: PathLike, magic: int, dims: int) -> Tuple[Tuple[int, ...], bytes]:
    data = Path(path).read_bytes()
    header = 4 * (1 + dims)
    if len(data) < header:
        raise FormatError(f"{path}: truncated IDX header")
    fields = struct.unpack(f">{1 + dims}I", data[:header])
    if fields[0] != magic:
        raise FormatError(f"{path}: magic 0x{fields[0]:08x}, expected 0x{magic:08x}")
    shape = tuple(fields[1:])
    payload = data[header:]
    if len(payload) != int(np.prod(shape, dtype=np.int64)):
        raise FormatError(f"{path}: payload of {len(payload)} bytes does not match dims {shape}")
    return shape, payload


def load_mnist_idx(images_path: PathLike, labels_path: PathLike, class_count: int = 10) -> ImageDataset:
    """
    Reads an MNIST image / label IDX pair (big-endian headers).

    :return: Dataset of [1, rows, cols] images
    """
    shape, pixels = _read_idx(images_path, MNIST_IMAGE_MAGIC, 3)
    (count,), raw_labels = _read_idx(labels_path, MNIST_LABEL_MAGIC, 1)
    if count != shape[0]:
        raise FormatError(f"{images_path} holds {shape[0]} images but {labels_path} holds {count} labels")
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    if count and labels.max() >= class_count:
        raise FormatError(f"{labels_path}: label {int(labels.max())} is not below {class_count}")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(shape[0], 1, shape[1], shape[2]).copy()
    return ImageDataset(images, labels, Path(images_path).name, class_count)
