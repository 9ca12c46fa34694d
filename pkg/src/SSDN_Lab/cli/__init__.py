from .cli import main, build_parser
from .config import (
    AnalysisConfig,
    DatasetConfig,
    ExperimentConfig,
    TargetConfig,
    parse_config,
    serialize_config,
)
from .metrics import HEADER, MetricsRow, read_metrics, write_metrics
from .runner import execute, load_datasets, load_target, run
