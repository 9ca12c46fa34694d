# Do the signal-dependent bridge coefficients cluster by covariate shift?
import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from sklearn.decomposition import PCA
from sklearn.metrics import silhouette_samples
from sklearn.preprocessing import StandardScaler

from ..engine import Tape
from ..errors import ContractViolation, DegenerateInputError
from ..regimes.utils import u_batchify
from ..shifts import ImageDataset, to_inputs
from ..ssdn import Model, forward_ss

MIN_RECORDS = 10


@dataclass
class AlphaRecord:
    alpha: np.ndarray  # flattened alpha_s of one test sample
    shift: str
    sample: int = 0
    layer: Optional[str] = None  # None when the vector spans every bridged layer


def collect_alpha_records(
    model: Model, dataset: ImageDataset, shift: str, per_layer: bool = False, batch_size: int = 64
) -> List[AlphaRecord]:
    """
    Alpha signal of every sample of a dataset.

    :param per_layer: Emit one record per bridged layer instead of one per sample
    """
    if not model.bridge.enable_signal_bridge:
        raise ContractViolation(f"Model with bridges {model.bridge.label} has no signal bridge")
    inputs = to_inputs(dataset.images, model.dtype)
    records = []
    start = 0
    for batch in u_batchify(inputs, batch_size):
        tape = Tape(model.dtype)
        _, alpha = forward_ss(model, tape.leaf(batch))
        blocks = alpha.per_layer() if per_layer else {None: alpha.values()}
        for n in range(len(batch)):
            for layer, values in blocks.items():
                records.append(AlphaRecord(values[n].astype(np.float64), shift, start + n, layer))
        start += len(batch)
    return records


class ClusterReport:
    """
    Container for a 2-D projection of alpha records.
    """

    def __init__(self, coords: np.ndarray, shifts: List[str], samples: List[int], explained_variance: np.ndarray) -> None:
        """
        Initializes a ClusterReport object.

        Args:
          coords (np.ndarray): Projected records [N, 2].
          shifts (List[str]): Shift name of each record.
          samples (List[int]): Sample index of each record.
          explained_variance (np.ndarray): Explained variance ratio of the components.
        """
        self.coords = coords
        self.shifts = shifts
        self.samples = samples
        self.explained_variance = explained_variance
        labels = np.asarray(shifts)
        self.sample_silhouette = silhouette_samples(coords, labels, metric="euclidean")
        self.silhouette = {s: float(self.sample_silhouette[labels == s].mean()) for s in dict.fromkeys(shifts)}

    @property
    def mean_silhouette(self) -> float:
        return float(self.sample_silhouette.mean())

    def separation(self, a: str, b: str) -> float:
        """Distance between the projected centroids of two shifts over their pooled RMS spread"""
        labels = np.asarray(self.shifts)
        groups = []
        for s in (a, b):
            if not np.any(labels == s):
                raise ContractViolation(f"No records for shift {s!r}")
            groups.append(self.coords[labels == s])
        centroids = [g.mean(axis=0) for g in groups]
        residuals = np.concatenate([g - c for g, c in zip(groups, centroids)])
        spread = np.sqrt(np.mean(np.sum(residuals ** 2, axis=1)))
        distance = float(np.linalg.norm(centroids[0] - centroids[1]))
        if spread == 0.0:
            return np.inf if distance > 0 else 0.0
        return distance / float(spread)

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["sample", "pc1", "pc2", "shift", "silhouette"])
            for k, shift in enumerate(self.shifts):
                writer.writerow(
                    [self.samples[k], f"{self.coords[k, 0]:.6f}", f"{self.coords[k, 1]:.6f}", shift, f"{self.silhouette[shift]:.6f}"]
                )


def alpha_projection(records: Sequence[AlphaRecord]) -> ClusterReport:
    """
    PCA to two components of standardized alpha vectors, with silhouettes per shift.

    :param records: At least MIN_RECORDS records for each of at least two shifts,
                    all from the same bridged layer (or all spanning every layer)
    """
    counts = Counter(r.shift for r in records)
    if len(counts) < 2:
        raise ContractViolation(f"alpha_projection needs at least 2 shifts, got {sorted(counts)}")
    short = {s: c for s, c in counts.items() if c < MIN_RECORDS}
    if short:
        raise ContractViolation(f"alpha_projection needs {MIN_RECORDS} records per shift, got {short}")
    layers = {r.layer for r in records}
    if len(layers) > 1:
        raise ContractViolation(
            f"alpha_projection mixes bridged layers {sorted(layers, key=str)}; project one layer at a time"
        )
    sizes = {np.size(r.alpha) for r in records}
    if len(sizes) > 1:
        raise ContractViolation(f"alpha_projection: records of different lengths {sorted(sizes)}")
    x = np.stack([np.asarray(r.alpha, dtype=np.float64).reshape(-1) for r in records])
    if np.all(x == x[0]):
        raise DegenerateInputError("alpha_projection: every record is identical")
    scaled = StandardScaler().fit_transform(x)
    pca = PCA(n_components=min(2, x.shape[1]), svd_solver="full")
    coords = pca.fit_transform(scaled)
    if coords.shape[1] < 2:
        coords = np.hstack([coords, np.zeros((len(coords), 2 - coords.shape[1]))])
    return ClusterReport(coords, [r.shift for r in records], [r.sample for r in records], pca.explained_variance_ratio_)

