"""Task definitions and named suites.

Three families of point-mass control tasks on shared double-integrator
dynamics, differing only in reward:

  point_dir   2-D, reward = new velocity projected on a goal direction
  point_vel   1-D, reward = -|new velocity - target speed|
  point_reach 2-D, reward = -distance(new position, goal point)

Goal parameters never appear in the state, so task identity is only
recoverable from the trajectory prompt.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import TaskError

FAMILIES = ("point_dir", "point_vel", "point_reach")

MAX_STATE_DIM = 4
MAX_ACTION_DIM = 2

_DIMS = {  # family -> (state_dim, action_dim)
    "point_dir": (4, 2),
    "point_vel": (2, 1),
    "point_reach": (4, 2),
}


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    family: str
    parameter: tuple  # (theta,) | (v_target,) | (gx, gy)
    episode_len: int = 64
    discount: float = 0.99  # formal only; returns are undiscounted
    score_range: tuple | None = None  # (R_min, R_max)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise TaskError(f"unknown family {self.family!r}")
        want = {"point_dir": 1, "point_vel": 1, "point_reach": 2}[self.family]
        if len(self.parameter) != want:
            raise TaskError(f"{self.family} expects {want} parameter(s), got {self.parameter}")
        if self.score_range is not None and not self.score_range[0] < self.score_range[1]:
            raise TaskError(f"score_range must satisfy R_min < R_max, got {self.score_range}")

    @property
    def state_dim(self) -> int:
        return _DIMS[self.family][0]

    @property
    def action_dim(self) -> int:
        return _DIMS[self.family][1]

    def with_range(self, r_min: float, r_max: float) -> "TaskSpec":
        return replace(self, score_range=(float(r_min), float(r_max)))


def _dir_tasks(angles, start_id, episode_len):
    return [TaskSpec(start_id + i, "point_dir", (float(a),), episode_len)
            for i, a in enumerate(angles)]


def _vel_tasks(targets, start_id, episode_len):
    return [TaskSpec(start_id + i, "point_vel", (float(v),), episode_len)
            for i, v in enumerate(targets)]


def _reach_tasks(angles, radius, start_id, episode_len):
    return [TaskSpec(start_id + i, "point_reach",
                     (float(radius * math.cos(a)), float(radius * math.sin(a))), episode_len)
            for i, a in enumerate(angles)]


def make_suite(name: str, episode_len: int = 64) -> list[TaskSpec]:
    """Named task suites.

    default16: 6 directions, 5 target speeds, 5 reach goals.
    dense48:   the same families densified to 18/15/15.
    planted12: three well-separated clusters of 4 directions each (planted
               group labels available via planted_labels).
    opposed4:  two direction pairs with opposing rewards, for conflict-curve
               checks.
    """
    # target speeds sit in [1.6, 2.8]: far enough from the random-walk
    # velocity band that a random policy cannot luck into high scores,
    # straddling the v_max cap so difficulty still varies across tasks
    if name == "default16":
        return (_dir_tasks(np.linspace(0, 2 * math.pi, 6, endpoint=False), 0, episode_len)
                + _vel_tasks(np.linspace(1.6, 2.8, 5), 6, episode_len)
                + _reach_tasks(np.linspace(0, 2 * math.pi, 5, endpoint=False), 0.8, 11, episode_len))
    if name == "dense48":
        return (_dir_tasks(np.linspace(0, 2 * math.pi, 18, endpoint=False), 0, episode_len)
                + _vel_tasks(np.linspace(1.6, 2.8, 15), 18, episode_len)
                + _reach_tasks(np.linspace(0, 2 * math.pi, 15, endpoint=False), 0.8, 33, episode_len))
    if name == "planted12":
        centers = [math.pi / 2, 7 * math.pi / 6, 11 * math.pi / 6]
        offsets = [-0.12, -0.04, 0.04, 0.12]
        angles = [c + o for c in centers for o in offsets]
        return _dir_tasks(angles, 0, episode_len)
    if name == "opposed4":
        return _dir_tasks([0.0, 0.05, math.pi, math.pi + 0.05], 0, episode_len)
    raise TaskError(f"unknown suite {name!r}")


def planted_labels(name: str) -> np.ndarray:
    """Ground-truth cluster labels for suites with planted structure."""
    if name == "planted12":
        return np.repeat(np.arange(3), 4)
    if name == "opposed4":
        return np.repeat(np.arange(2), 2)
    raise TaskError(f"suite {name!r} has no planted labels")


SUITE_NAMES = ("default16", "dense48", "planted12", "opposed4")
