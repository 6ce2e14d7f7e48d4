"""Config-driven experiment runners and their CSV/JSON records."""

from .config import ConfigError, ExperimentConfig, from_dict, load_config, with_overrides
from .experiments import RUNNERS, run_experiment
from .records import RunRecord, read_csv, write_record

__all__ = [
    "ConfigError", "ExperimentConfig", "from_dict", "load_config", "with_overrides",
    "RUNNERS", "run_experiment", "RunRecord", "read_csv", "write_record",
]
