"""
Representation similarity, block sensitivity and alpha clustering.
"""
from .cka import ActivationMatrix, MAX_COLUMNS, linear_cka
from .sensitivity import (
    PROBE_SIZE,
    SensitivityReport,
    TuneConfig,
    block_outputs,
    block_sensitivity,
    block_similarity,
    control_similarity,
    fine_tune_block,
    group_ids,
    pairwise_similarity,
)
from .alphas import AlphaRecord, ClusterReport, alpha_projection, collect_alpha_records
