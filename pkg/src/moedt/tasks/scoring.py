"""Score normalization with brute-force range oracles.

R_max is the mean return of the noise-free scripted controller; R_min the
mean return of a uniform-random policy, both over n_episodes rollouts with
varying initial states. Scores map returns linearly onto [0, 100], clipped.
"""
from __future__ import annotations

import numpy as np

from .. import rng as _rng
from ..errors import ScoreRangeError
from .controllers import controller_action, random_action
from .data import rollout
from .suite import TaskSpec

ORACLE_EPISODES = 100


def controller_episode_return(task: TaskSpec, gen: np.random.Generator) -> float:
    traj = rollout(task, lambda s, t: controller_action(task, s), gen)
    return traj.total_return()


def random_episode_return(task: TaskSpec, gen: np.random.Generator) -> float:
    traj = rollout(task, lambda s, t: random_action(task, gen), gen)
    return traj.total_return()


def estimate_score_range(task: TaskSpec, n_episodes: int = ORACLE_EPISODES,
                         seed: int = 0) -> tuple[float, float]:
    """(R_min, R_max) oracle pair; raises if the controller fails to beat random."""
    gen_hi = _rng.stream(_rng.EVAL, seed, task.task_id, 0)
    gen_lo = _rng.stream(_rng.EVAL, seed, task.task_id, 1)
    r_max = float(np.mean([controller_episode_return(task, gen_hi) for _ in range(n_episodes)]))
    r_min = float(np.mean([random_episode_return(task, gen_lo) for _ in range(n_episodes)]))
    if not r_min < r_max:
        raise ScoreRangeError(f"task {task.task_id}: controller ({r_max:.3f}) "
                              f"does not beat random ({r_min:.3f})")
    return r_min, r_max


def normalized_score(task: TaskSpec, episode_return: float) -> float:
    """100 * (R - R_min) / (R_max - R_min), clipped to [0, 100]."""
    if task.score_range is None:
        raise ScoreRangeError(f"task {task.task_id} has no score_range")
    r_min, r_max = task.score_range
    if r_min == r_max:
        raise ScoreRangeError(f"task {task.task_id}: degenerate score range")
    raw = 100.0 * (episode_return - r_min) / (r_max - r_min)
    return float(np.clip(raw, 0.0, 100.0))
