# Rotation-prediction pretext task
from typing import Tuple

import numpy as np

from ..errors import ContractViolation

ROTATION_CLASSES = 4  # 0, 90, 180, 270 degrees


def _check_square(x: np.ndarray) -> None:
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ContractViolation(f"Rotation needs square images, got shape {x.shape}")


def rotate_image(x: np.ndarray, label: int) -> np.ndarray:
    """
    Rotates a [C, S, S] image counter-clockwise by label * 90 degrees.

    For one quarter turn out[c][i][j] = in[c][j][S-1-i]. The result is an
    exact pixel permutation of the input.
    """
    x = np.asarray(x)
    _check_square(x)
    if label not in range(ROTATION_CLASSES):
        raise ContractViolation(f"Rotation label must be in 0..3, got {label}")
    return np.ascontiguousarray(np.rot90(x, k=label, axes=(-2, -1)))


def make_rotation_batch(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    :param x: Image [C, S, S]
    :return: Tuple of the four rotations [4, C, S, S] and labels [0, 1, 2, 3]
    """
    x = np.asarray(x)
    _check_square(x)
    batch = np.stack([rotate_image(x, k) for k in range(ROTATION_CLASSES)])
    return batch, np.arange(ROTATION_CLASSES, dtype=np.int64)


def rotation_batches(images: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation batches of a stack of images, concatenated image by image: [4N, C, S, S], [4N]"""
    images = np.asarray(images)
    _check_square(images)
    n = images.shape[0]
    batch = np.stack([np.rot90(images, k=k, axes=(-2, -1)) for k in range(ROTATION_CLASSES)], axis=1)
    labels = np.tile(np.arange(ROTATION_CLASSES, dtype=np.int64), n)
    return np.ascontiguousarray(batch.reshape((n * ROTATION_CLASSES,) + images.shape[1:])), labels
