"""
Datasets, format loaders, and covariate-shift corruptions.
"""
from .datasets import (
    ImageDataset,
    to_inputs,
    load_cifar10_binary,
    save_cifar10_binary,
    load_mnist_idx,
)
from .synthetic import SyntheticSpec, SHAPES, gen_synthetic, shape_mask
from .corruptions import (
    CorruptionSpec,
    KINDS,
    SEVERITY_TABLES,
    apply_corruption,
    corrupt_dataset,
    corruption_rng,
)
