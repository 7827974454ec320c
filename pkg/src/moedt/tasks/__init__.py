from .controllers import controller_action, controller_action_batch, random_action
from .data import (DatasetStore, Trajectory, compute_rtg, generate_dataset,
                   load_dataset_jsonl, pad_and_mask, rollout, sample_batch,
                   sample_prompt, save_dataset_jsonl, top_quartile)
from .env import DT, V_MAX, reset_state, step_env, step_env_batch
from .evaluate import (controller_actor, evaluate_actors, evaluate_model,
                       random_actor, resolve_mode)
from .scoring import estimate_score_range, normalized_score
from .suite import SUITE_NAMES, TaskSpec, make_suite, planted_labels

__all__ = [
    "DT", "V_MAX", "SUITE_NAMES", "DatasetStore", "TaskSpec", "Trajectory",
    "compute_rtg", "controller_action", "controller_action_batch",
    "controller_actor", "estimate_score_range", "evaluate_actors",
    "evaluate_model", "generate_dataset", "load_dataset_jsonl", "make_suite",
    "normalized_score", "pad_and_mask", "planted_labels", "random_action",
    "random_actor", "reset_state", "resolve_mode", "rollout", "sample_batch",
    "sample_prompt", "save_dataset_jsonl", "step_env", "step_env_batch",
    "top_quartile",
]
