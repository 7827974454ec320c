"""Double-integrator dynamics shared by all task families.

    p' = p + v * dt
    v' = clip_norm(v + a * dt, V_MAX)

with dt = 0.1, speed capped at ||v|| <= 2 and actions in [-1, 1]^d. Rewards
are computed from the post-step values (v' for velocity-based families, p'
for reach). Dynamics are deterministic and pure.
"""
from __future__ import annotations

import numpy as np

from ..errors import TaskError
from .suite import TaskSpec

DT = 0.1
V_MAX = 2.0


def reset_state(task: TaskSpec, gen: np.random.Generator) -> np.ndarray:
    """Initial state draw.

    Start regions are kept narrow so episode returns are dominated by the
    policy rather than the draw; this keeps random-policy scores near the
    R_min oracle instead of smearing across the score range.
    """
    if task.family == "point_vel":
        p = gen.uniform(-0.2, 0.2, size=1)
        v = gen.uniform(-0.25, 0.25, size=1)
    elif task.family == "point_dir":
        p = gen.uniform(-0.2, 0.2, size=2)
        v = gen.uniform(-0.5, 0.5, size=2)
    else:  # point_reach
        p = gen.uniform(-0.3, 0.3, size=2)
        v = gen.uniform(-0.3, 0.3, size=2)
    return np.concatenate([p, v])


def step_env_batch(task: TaskSpec, states: np.ndarray, actions: np.ndarray):
    """Vectorized step over a batch of episodes [E, state_dim] / [E, action_dim]."""
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if not (np.all(np.isfinite(states)) and np.all(np.isfinite(actions))):
        raise TaskError("step_env: non-finite state or action")
    if states.shape[-1] != task.state_dim or actions.shape[-1] != task.action_dim:
        raise TaskError(f"step_env: dims {states.shape[-1]}/{actions.shape[-1]} "
                        f"do not match task {task.family}")
    a = np.clip(actions, -1.0, 1.0)
    d = task.action_dim  # position block width equals action dim
    p, v = states[..., :d], states[..., d:]
    p_next = p + v * DT
    v_next = v + a * DT
    speed = np.sqrt((v_next * v_next).sum(axis=-1, keepdims=True))
    over = speed > V_MAX
    v_next = np.where(over, v_next * (V_MAX / np.where(over, speed, 1.0)), v_next)

    if task.family == "point_dir":
        theta = task.parameter[0]
        reward = v_next[..., 0] * np.cos(theta) + v_next[..., 1] * np.sin(theta)
    elif task.family == "point_vel":
        reward = -np.abs(v_next[..., 0] - task.parameter[0])
    else:
        g = np.asarray(task.parameter)
        diff = p_next - g
        reward = -np.sqrt((diff * diff).sum(axis=-1))
    return np.concatenate([p_next, v_next], axis=-1), reward


def step_env(task: TaskSpec, state: np.ndarray, action: np.ndarray):
    """Single-episode step; see step_env_batch for the dynamics."""
    next_state, reward = step_env_batch(task, np.asarray(state)[None, :],
                                        np.asarray(action)[None, :])
    return next_state[0], float(reward[0])
