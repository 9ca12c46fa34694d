# Linear centered kernel alignment between two sets of activations
from dataclasses import dataclass
from typing import Optional, Union
from warnings import warn

import numpy as np

from ..errors import ContractViolation, DegenerateInputError

MAX_COLUMNS = 4096


@dataclass
class ActivationMatrix:
    """Rows are probe samples, columns flattened channel x spatial features"""

    values: np.ndarray
    centered: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractViolation(f"ActivationMatrix must be 2-D, got {self.values.shape}")
        if self.values.shape[0] < 2:
            raise ContractViolation(f"ActivationMatrix needs at least 2 rows, got {self.values.shape[0]}")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    def center(self) -> "ActivationMatrix":
        if self.centered:
            return self
        return ActivationMatrix(self.values - self.values.mean(axis=0, keepdims=True), centered=True)

    @classmethod
    def from_activations(
        cls, activations: np.ndarray, max_columns: int = MAX_COLUMNS, seed: Optional[int] = 0
    ) -> "ActivationMatrix":
        """
        Flattens [N, ...] activations to [N, F], keeping a seeded subset of
        max_columns columns when F is larger. Equal seeds pick equal columns,
        so two models' activations of the same block stay comparable.
        """
        flat = np.asarray(activations, dtype=np.float64).reshape(len(activations), -1)
        if flat.shape[1] > max_columns:
            warn(f"Subsampling {flat.shape[1]} activation columns to {max_columns}")
            keep = np.sort(np.random.default_rng(seed).choice(flat.shape[1], max_columns, replace=False))
            flat = flat[:, keep]
        return cls(flat)


Matrix = Union[ActivationMatrix, np.ndarray]


def _as_matrix(m: Matrix) -> ActivationMatrix:
    return m if isinstance(m, ActivationMatrix) else ActivationMatrix(m)


def linear_cka(x: Matrix, y: Matrix) -> float:
    """
    Linear CKA in 64-bit arithmetic.

    After column-centering, CKA = ||Y^T X||_F^2 / (||X^T X||_F * ||Y^T Y||_F),
    evaluated through the sample Gram matrices.

    :param x: [N, F1]
    :param y: [N, F2]
    :return: Similarity in [0, 1]
    """
    x, y = _as_matrix(x).center(), _as_matrix(y).center()
    if x.rows != y.rows:
        raise ContractViolation(f"linear_cka: {x.rows} rows vs {y.rows} rows")
    gram_x = x.values @ x.values.T
    gram_y = y.values @ y.values.T
    hsic_xy = np.sum(gram_x * gram_y)
    hsic_xx = np.sum(gram_x * gram_x)
    hsic_yy = np.sum(gram_y * gram_y)
    if hsic_xx == 0.0 or hsic_yy == 0.0:
        raise DegenerateInputError("linear_cka: activation matrix has zero variance")
    return float(hsic_xy / np.sqrt(hsic_xx * hsic_yy))
