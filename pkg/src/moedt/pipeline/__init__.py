"""Experiment pipeline: configs, checkpoints, metrics, stages, ablations."""
from .ablation import VARIANTS, run_ablation, variant_paths
from .checkpoint import load_checkpoint, read_meta, save_checkpoint
from .config import (EarlyStopConfig, ExperimentConfig, GroupingConfig,
                     SubsetConfig, SuiteConfig, TrainingConfig,
                     acceptance_config, config_from_dict, config_hash,
                     config_to_dict, desk_config, load_config, paper_config)
from .metrics import COLUMNS, HEADER, STAGES, MetricsWriter, read_rows
from .report import collect_report, write_report
from .stages import (RunPaths, build_model, compute_groups, evaluate_suite,
                     generate_data, load_groups, load_store, run_pipeline,
                     stage1_train, stage2_train_experts, stage3_train_router)

__all__ = [
    "VARIANTS", "run_ablation", "variant_paths",
    "load_checkpoint", "read_meta", "save_checkpoint",
    "EarlyStopConfig", "ExperimentConfig", "GroupingConfig", "SubsetConfig",
    "SuiteConfig", "TrainingConfig", "acceptance_config", "config_from_dict",
    "config_hash", "config_to_dict", "desk_config", "load_config",
    "paper_config",
    "COLUMNS", "HEADER", "STAGES", "MetricsWriter", "read_rows",
    "collect_report", "write_report",
    "RunPaths", "build_model", "compute_groups", "evaluate_suite",
    "generate_data", "load_groups", "load_store", "run_pipeline",
    "stage1_train", "stage2_train_experts", "stage3_train_router",
]
