from typing import Dict, List, Optional

import numpy as np

from ..errors import ContractViolation


class Metrics:
    """
    Container for training and evaluation results.
    """

    def __init__(
        self,
        main_error_percent: float = 0.0,
        ss_error_percent: float = 0.0,
        per_shift: Optional[Dict[str, float]] = None,
        losses: Optional[List[float]] = None,
        main_losses: Optional[List[float]] = None,
        ss_losses: Optional[List[float]] = None,
    ) -> None:
        """
        Initializes a Metrics object.

        Args:
          main_error_percent (float): Main-task error in percent.
          ss_error_percent (float): Rotation-prediction error in percent.
          per_shift (Dict[str, float]): Main-task error per shift name.
          losses (List[float]): Total loss per training step.
          main_losses (List[float]): Main-task loss per training step.
          ss_losses (List[float]): Weighted self-supervised loss per training step.
        """
        for label, value in (("main_error_percent", main_error_percent), ("ss_error_percent", ss_error_percent)):
            if not 0.0 <= value <= 100.0:
                raise ContractViolation(f"Metrics.{label} must be in [0, 100], got {value}")
        self.main_error_percent = float(main_error_percent)
        self.ss_error_percent = float(ss_error_percent)
        self.per_shift = dict(per_shift or {})
        self.losses = list(losses or [])
        self.main_losses = list(main_losses or [])
        self.ss_losses = list(ss_losses or [])

    @property
    def empty(self) -> bool:
        return not self.losses and not self.per_shift

    def __repr__(self) -> str:
        return (
            f"Metrics(main_error_percent={self.main_error_percent:.2f}, "
            f"ss_error_percent={self.ss_error_percent:.2f}, steps={len(self.losses)})"
        )


class TTTResult:
    """
    Container for one test-time adaptation.
    """

    def __init__(self, prediction: int, logits: np.ndarray, ss_losses: List[float]) -> None:
        """
        Initializes a TTTResult object.

        Args:
          prediction (int): Predicted class after adaptation.
          logits (np.ndarray): Class logits after adaptation.
          ss_losses (List[float]): Rotation loss before each inner step, then after the last one.
        """
        self.prediction = prediction
        self.logits = logits
        self.ss_losses = ss_losses

    @property
    def initial_ss_loss(self) -> float:
        return self.ss_losses[0]

    @property
    def final_ss_loss(self) -> float:
        return self.ss_losses[-1]
