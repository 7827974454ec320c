"""Scripted behavior policies: PD controllers per family plus a random policy.

The noise-free controller defines each task's R_max oracle; the uniform
random policy defines R_min. Gains are recorded in the dataset manifest.
"""
from __future__ import annotations

import numpy as np

from .env import V_MAX
from .suite import TaskSpec

KP = 4.0  # position gain (point_reach)
KD = 4.0  # damping gain (point_reach)
KV = 5.0  # velocity gain (point_dir / point_vel)

GAINS = {"kp": KP, "kd": KD, "kv": KV}


def controller_action_batch(task: TaskSpec, states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    d = task.action_dim
    p, v = states[..., :d], states[..., d:]
    if task.family == "point_dir":
        theta = task.parameter[0]
        v_target = V_MAX * np.array([np.cos(theta), np.sin(theta)])
        a = KV * (v_target - v)
    elif task.family == "point_vel":
        a = KV * (task.parameter[0] - v)
    else:
        g = np.asarray(task.parameter)
        a = KP * (g - p) - KD * v
    return np.clip(a, -1.0, 1.0)


def controller_action(task: TaskSpec, state: np.ndarray) -> np.ndarray:
    return controller_action_batch(task, np.asarray(state)[None, :])[0]


def random_action(task: TaskSpec, gen: np.random.Generator) -> np.ndarray:
    return gen.uniform(-1.0, 1.0, size=task.action_dim)


def random_action_batch(task: TaskSpec, gen: np.random.Generator, n: int) -> np.ndarray:
    return gen.uniform(-1.0, 1.0, size=(n, task.action_dim))
