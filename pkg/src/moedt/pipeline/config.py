"""Experiment configuration: strict JSON parsing, presets, hashing.

Unknown keys anywhere in the document are an error so misspelled options
cannot silently fall back to defaults.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from ..errors import ConfigError
from ..model.config import ModelConfig, MoEConfig
from ..tasks.suite import SUITE_NAMES


@dataclass(frozen=True)
class EarlyStopConfig:
    enabled: bool = True
    smoothing_window: int = 5  # centered moving average over similarity samples
    patience: int = 3

    def __post_init__(self):
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ConfigError("smoothing_window must be a positive odd integer")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")


@dataclass(frozen=True)
class SubsetConfig:
    n: int
    subset_seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("subset n must be >= 1")


@dataclass(frozen=True)
class SuiteConfig:
    name: str = "default16"
    episode_len: int = 64
    n_traj: int = 32
    oracle_episodes: int = 100  # rollouts behind each score-range endpoint
    subset: SubsetConfig | None = None

    def __post_init__(self):
        if self.name not in SUITE_NAMES:
            raise ConfigError(f"unknown suite {self.name!r} (one of {SUITE_NAMES})")
        if self.n_traj < 1 or self.episode_len < 1 or self.oracle_episodes < 2:
            raise ConfigError("n_traj/episode_len/oracle_episodes out of range")


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 16
    lr: float = 1e-4
    dropout: float = 0.1
    steps_stage1: int = 20_000
    steps_stage2: int = 10_000
    steps_stage3: int = 20_000
    sim_log_interval: int = 500
    loss_log_interval: int = 100
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    batches_per_task: int = 8  # minibatches behind each per-task gradient
    sim_scope: str = "all_backbone"
    eval_episodes: int = 10
    eval_target: str = "range_max"  # or dataset_max

    def __post_init__(self):
        for name in ("steps_stage1", "steps_stage2", "steps_stage3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.batch_size < 1 or self.batches_per_task < 1 or self.eval_episodes < 1:
            raise ConfigError("batch_size/batches_per_task/eval_episodes must be >= 1")
        if self.sim_log_interval < 1 or self.loss_log_interval < 1:
            raise ConfigError("log intervals must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.eval_target not in ("range_max", "dataset_max"):
            raise ConfigError(f"eval_target must be range_max or dataset_max, "
                              f"got {self.eval_target!r}")
        if self.sim_scope not in ("all_backbone", "ffn_only"):
            raise ConfigError(f"sim_scope must be all_backbone or ffn_only, "
                              f"got {self.sim_scope!r}")


@dataclass(frozen=True)
class GroupingConfig:
    method: str = "gradient"
    n_groups: int = 4

    def __post_init__(self):
        if self.method not in ("random", "gradient"):
            raise ConfigError(f"grouping method must be random or gradient, "
                              f"got {self.method!r}")
        if self.n_groups < 1:
            raise ConfigError("n_groups must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    suite: SuiteConfig
    model: ModelConfig
    moe: MoEConfig
    training: TrainingConfig
    grouping: GroupingConfig
    seed: int = 0
    output_dir: str = "runs/run"

    def __post_init__(self):
        if self.grouping.n_groups != self.moe.n_experts:
            raise ConfigError(f"n_groups ({self.grouping.n_groups}) must equal "
                              f"n_experts ({self.moe.n_experts})")
        if self.model.context_K > self.suite.episode_len:
            raise ConfigError("context_K cannot exceed episode_len")
        if self.suite.episode_len > self.model.max_episode_len:
            raise ConfigError("episode_len exceeds the timestep embedding table")
        if self.model.dropout != self.training.dropout:
            raise ConfigError("model.dropout is derived from training.dropout")


_SCHEMA = {
    "suite": {"name", "episode_len", "n_traj", "oracle_episodes", "subset"},
    "subset": {"n", "subset_seed"},
    "model": {"n_layers", "n_heads", "hidden_dim", "context_K", "prompt_Kstar",
              "max_state_dim", "max_action_dim", "max_episode_len", "activation"},
    "moe": {"n_experts", "router_layers", "router_hidden"},
    "training": {"batch_size", "lr", "dropout", "steps_stage1", "steps_stage2",
                 "steps_stage3", "sim_log_interval", "loss_log_interval",
                 "early_stop", "batches_per_task", "sim_scope", "eval_episodes",
                 "eval_target"},
    "early_stop": {"enabled", "smoothing_window", "patience"},
    "grouping": {"method", "n_groups"},
    "top": {"suite", "model", "moe", "training", "grouping", "seed", "output_dir"},
}


def _check_keys(section: str, obj: dict) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{section} section must be an object")
    unknown = set(obj) - _SCHEMA[section]
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")
    return obj


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = _check_keys("top", doc)
    suite_doc = dict(_check_keys("suite", doc.get("suite", {})))
    subset = suite_doc.pop("subset", None)
    if subset is not None:
        subset = SubsetConfig(**_check_keys("subset", subset))
    suite = SuiteConfig(subset=subset, **suite_doc)

    model_doc = dict(_check_keys("model", doc.get("model", {})))
    model_doc.setdefault("max_episode_len", suite.episode_len)

    train_doc = dict(_check_keys("training", doc.get("training", {})))
    early = train_doc.pop("early_stop", None)
    if early is not None:
        early = EarlyStopConfig(**_check_keys("early_stop", early))
        train_doc["early_stop"] = early
    training = TrainingConfig(**train_doc)
    model = ModelConfig(dropout=training.dropout, **model_doc)

    moe = MoEConfig(**_check_keys("moe", doc.get("moe", {})))
    grouping = GroupingConfig(**_check_keys("grouping", doc.get("grouping", {})))
    try:
        return ExperimentConfig(
            suite=suite, model=model, moe=moe, training=training,
            grouping=grouping, seed=int(doc.get("seed", 0)),
            output_dir=str(doc.get("output_dir", "runs/run")))
    except TypeError as e:
        raise ConfigError(str(e))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "suite": asdict(cfg.suite),
        "model": {k: v for k, v in asdict(cfg.model).items() if k != "dropout"},
        "moe": {"n_experts": cfg.moe.n_experts,
                "router_layers": cfg.moe.router_layers,
                "router_hidden": cfg.moe.router_hidden},
        "training": asdict(cfg.training),
        "grouping": asdict(cfg.grouping),
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
    }
    if cfg.suite.subset is None:
        doc["suite"].pop("subset")
    return doc


def load_config(path: str, seed: int | None = None,
                output_dir: str | None = None) -> ExperimentConfig:
    """Parse a JSON config file, optionally overriding seed / output_dir."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"no config file at {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    if seed is not None:
        doc["seed"] = seed
    if output_dir is not None:
        doc["output_dir"] = output_dir
    return config_from_dict(doc)


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 over the canonical JSON form (output_dir excluded)."""
    doc = config_to_dict(cfg)
    doc.pop("output_dir")
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# presets


def desk_config(seed: int = 0, output_dir: str = "runs/desk") -> ExperimentConfig:
    """Defaults sized for a workstation CPU (order an hour end to end)."""
    return config_from_dict({
        "suite": {"name": "default16", "episode_len": 64, "n_traj": 32},
        "model": {"n_layers": 3, "n_heads": 4, "hidden_dim": 64,
                  "context_K": 20, "prompt_Kstar": 5},
        "moe": {"n_experts": 4},
        "training": {"batch_size": 16, "lr": 1e-4, "dropout": 0.1,
                     "steps_stage1": 20_000, "steps_stage2": 10_000,
                     "steps_stage3": 20_000, "sim_log_interval": 500},
        "grouping": {"method": "gradient", "n_groups": 4},
        "seed": seed,
        "output_dir": output_dir,
    })


def paper_config(seed: int = 0, output_dir: str = "runs/paper") -> ExperimentConfig:
    """Full-scale reference settings; documentation, not a CI target."""
    return config_from_dict({
        "suite": {"name": "dense48", "episode_len": 64, "n_traj": 128},
        "model": {"n_layers": 6, "n_heads": 8, "hidden_dim": 256,
                  "context_K": 20, "prompt_Kstar": 5},
        "moe": {"n_experts": 8},
        "training": {"batch_size": 16, "lr": 1e-4, "dropout": 0.1,
                     "steps_stage1": 400_000, "steps_stage2": 200_000,
                     "steps_stage3": 400_000, "sim_log_interval": 10_000},
        "grouping": {"method": "gradient", "n_groups": 8},
        "seed": seed,
        "output_dir": output_dir,
    })


def acceptance_config(seed: int = 0, output_dir: str = "runs/acceptance") -> ExperimentConfig:
    """Small settings tuned so the trend checks resolve in CI time."""
    return config_from_dict({
        "suite": {"name": "default16", "episode_len": 64, "n_traj": 24,
                  "oracle_episodes": 50},
        "model": {"n_layers": 2, "n_heads": 2, "hidden_dim": 32,
                  "context_K": 8, "prompt_Kstar": 3},
        "moe": {"n_experts": 4},
        "training": {"batch_size": 8, "lr": 3e-4, "dropout": 0.1,
                     "steps_stage1": 2000, "steps_stage2": 1000,
                     "steps_stage3": 2000, "sim_log_interval": 250,
                     "batches_per_task": 4},
        "grouping": {"method": "gradient", "n_groups": 4},
        "seed": seed,
        "output_dir": output_dir,
    })
