# Fixtures for tiny models and datasets
import struct

import numpy as np
import pytest

from SSDN_Lab.nn import ArchConfig
from SSDN_Lab.shifts import SyntheticSpec, gen_synthetic
from SSDN_Lab.ssdn import BridgeConfig, build_model

# 8x8 inputs through four groups: 8 -> 8 -> 4 -> 2 -> 1
TINY_ARCH = ArchConfig(
    c0_channels=4,
    num_groups=4,
    blocks_per_group=1,
    group_widths=(4, 4, 4, 4),
    num_classes=4,
    num_rotation_classes=4,
    norm_groups=2,
    in_channels=3,
)
TINY_SPEC = SyntheticSpec(image_side=8, class_count=4, samples_per_class=4, shape_size=4)

# Mapping form of the tiny setup, shared by the configuration and CLI tests
TINY_CONFIG = {
    "arch": {
        "c0_channels": 4,
        "group_widths": [4, 4, 4, 4],
        "norm_groups": 2,
    },
    "train": {"batch_size": 8, "lr": 0.05},
    "epochs": 1,
    "ttt": {"K": 1},
    "dataset": {
        "source": "synthetic",
        "synthetic": {"image_side": 8, "samples_per_class": 4, "shape_size": 4},
        "test_samples_per_class": 3,
    },
}


def write_idx(path, magic: int, dims, payload: bytes) -> None:
    """Writes an IDX file: big-endian magic and dimensions, then the payload"""
    path.write_bytes(struct.pack(f">{1 + len(dims)}I", magic, *dims) + payload)


def perturb(model, scale: float = 0.1, seed: int = 0):
    """Moves every parameter off its initial value (identity alphas, zero predictor)"""
    rng = np.random.default_rng(seed)
    for name, value in list(model.registry.items()):
        model.registry[name] = value + scale * rng.standard_normal(value.shape)
    return model


@pytest.fixture
def tiny_arch() -> ArchConfig:
    yield TINY_ARCH


@pytest.fixture
# SSDN model with a G1 split, both bridges, 64-bit parameters
def tiny_model():
    yield build_model(TINY_ARCH, BridgeConfig(), seed=0, dtype=np.float64)


@pytest.fixture
# Joint-training model (no split), 64-bit parameters
def tiny_shared_model():
    yield build_model(TINY_ARCH, BridgeConfig.shared(), seed=0, dtype=np.float64)


@pytest.fixture(scope="session")
def tiny_dataset():
    yield gen_synthetic(TINY_SPEC, seed=0, name="tiny")


@pytest.fixture
def tiny_inputs():
    yield np.random.default_rng(0).uniform(-1.0, 1.0, size=(2, 3, 8, 8))
