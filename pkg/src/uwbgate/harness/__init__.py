"""Configuration, datasets, experiment orchestration, reporting and the CLI."""

from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .datasets import CirDataset, DatasetError, export_dataset, import_dataset, stratified_split, synth_cir_dataset
from .experiment import TrainedModels, run_experiment
from .report import MetricsReport, ReportError, export_metrics, validate_report

__all__ = [
    "ConfigError", "ExperimentConfig", "config_from_dict", "load_config", "CirDataset", "DatasetError",
    "export_dataset", "import_dataset", "stratified_split", "synth_cir_dataset", "TrainedModels",
    "run_experiment", "MetricsReport", "ReportError", "export_metrics", "validate_report",
]
