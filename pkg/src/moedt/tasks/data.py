"""Offline trajectory datasets: generation, serialization, batching, prompts.

Datasets are produced by scripted PD controllers with an annealed Gaussian
exploration-noise ladder (std 1.0 for the first trajectory down to 0.05 for
the last), giving mixed-quality data per task. Files are line-delimited JSON,
one trajectory per line, numbers printed with 9 significant digits (exact for
float32 storage), so regeneration is byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .. import rng as _rng
from ..errors import DatasetError, TaskError
from ..model.tokens import SegmentBatch
from .controllers import GAINS, controller_action_batch
from .env import DT, V_MAX, reset_state, step_env
from .suite import MAX_ACTION_DIM, MAX_STATE_DIM, TaskSpec


@dataclass
class Trajectory:
    states: np.ndarray     # [T, state_dim] float32
    actions: np.ndarray    # [T, action_dim] float32
    rewards: np.ndarray    # [T] float32
    rtg: np.ndarray        # [T] float32
    timesteps: np.ndarray  # [T] int64
    task_id: int

    @property
    def T(self) -> int:
        return len(self.rewards)

    def total_return(self) -> float:
        return float(self.rewards.sum(dtype=np.float64))


def compute_rtg(rewards) -> np.ndarray:
    """Undiscounted suffix sums: rtg[t] = sum of rewards[t:]."""
    r = np.asarray(rewards, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise TaskError("compute_rtg: non-finite rewards")
    return np.cumsum(r[::-1])[::-1]


def rollout(task: TaskSpec, action_fn, gen: np.random.Generator) -> Trajectory:
    """Run one full episode; action_fn(state, t) may return unclipped actions."""
    s = reset_state(task, gen)
    states, actions, rewards = [], [], []
    for t in range(task.episode_len):
        a = np.clip(np.asarray(action_fn(s, t), dtype=np.float64), -1.0, 1.0)
        states.append(s)
        actions.append(a)
        s, r = step_env(task, s, a)
        rewards.append(r)
    rtg = compute_rtg(rewards)
    return Trajectory(
        states=np.asarray(states, dtype=np.float32),
        actions=np.asarray(actions, dtype=np.float32),
        rewards=np.asarray(rewards, dtype=np.float32),
        rtg=rtg.astype(np.float32),
        timesteps=np.arange(task.episode_len, dtype=np.int64),
        task_id=task.task_id,
    )


def generate_dataset(task: TaskSpec, n_traj: int, seed: int,
                     noise_hi: float = 1.0, noise_lo: float = 0.05) -> list[Trajectory]:
    if n_traj < 1:
        raise DatasetError("n_traj must be >= 1")
    gen = _rng.stream(_rng.DATA, seed, task.task_id)
    out = []
    for i in range(n_traj):
        sigma = noise_hi + (noise_lo - noise_hi) * i / max(n_traj - 1, 1)

        def act(state, t, _s=sigma):
            base = controller_action_batch(task, state[None, :])[0]
            return base + gen.normal(0.0, _s, size=task.action_dim)

        out.append(rollout(task, act, gen))
    return out


# ---------------------------------------------------------------------------
# serialization


def _fmt(x) -> str:
    return "%.9g" % float(x)


def _arr1(a) -> str:
    return "[" + ",".join(_fmt(v) for v in a) + "]"


def _arr2(a) -> str:
    return "[" + ",".join(_arr1(row) for row in a) + "]"


def trajectory_to_json(traj: Trajectory) -> str:
    ints = "[" + ",".join(str(int(t)) for t in traj.timesteps) + "]"
    return ('{"states":' + _arr2(traj.states) + ',"actions":' + _arr2(traj.actions)
            + ',"rewards":' + _arr1(traj.rewards) + ',"rtg":' + _arr1(traj.rtg)
            + ',"timesteps":' + ints + ',"task_id":' + str(int(traj.task_id)) + "}")


def trajectory_from_json(line: str) -> Trajectory:
    obj = json.loads(line)
    return Trajectory(
        states=np.asarray(obj["states"], dtype=np.float32),
        actions=np.asarray(obj["actions"], dtype=np.float32),
        rewards=np.asarray(obj["rewards"], dtype=np.float32),
        rtg=np.asarray(obj["rtg"], dtype=np.float32),
        timesteps=np.asarray(obj["timesteps"], dtype=np.int64),
        task_id=int(obj["task_id"]),
    )


def save_dataset_jsonl(path: str, trajs: list[Trajectory]) -> str:
    """Write one trajectory per line; returns the file's sha256 hex digest."""
    blob = "".join(trajectory_to_json(t) + "\n" for t in trajs).encode()
    with open(path, "wb") as f:
        f.write(blob)
    return hashlib.sha256(blob).hexdigest()


def load_dataset_jsonl(path: str) -> list[Trajectory]:
    with open(path) as f:
        return [trajectory_from_json(line) for line in f if line.strip()]


# ---------------------------------------------------------------------------
# padding / masking


def action_mask_for(task: TaskSpec, max_action_dim: int = MAX_ACTION_DIM) -> np.ndarray:
    mask = np.zeros(max_action_dim, dtype=np.float32)
    mask[:task.action_dim] = 1.0
    return mask


def pad_and_mask(traj: Trajectory, max_state_dim: int = MAX_STATE_DIM,
                 max_action_dim: int = MAX_ACTION_DIM):
    """Zero-pad state/action dims on the right; mask marks real action dims."""
    sd = traj.states.shape[1]
    ad_ = traj.actions.shape[1]
    if sd > max_state_dim or ad_ > max_action_dim:
        raise DatasetError(f"dims ({sd},{ad_}) exceed maxima ({max_state_dim},{max_action_dim})")
    states = np.zeros((traj.T, max_state_dim), dtype=np.float32)
    states[:, :sd] = traj.states
    actions = np.zeros((traj.T, max_action_dim), dtype=np.float32)
    actions[:, :ad_] = traj.actions
    padded = Trajectory(states, actions, traj.rewards, traj.rtg, traj.timesteps, traj.task_id)
    mask = np.zeros(max_action_dim, dtype=np.float32)
    mask[:ad_] = 1.0
    return padded, mask


# ---------------------------------------------------------------------------
# store


class DatasetStore:
    """Per-task trajectory lists plus the generation manifest."""

    def __init__(self):
        self.specs: dict[int, TaskSpec] = {}
        self.data: dict[int, list[Trajectory]] = {}
        self.meta: dict = {}

    def add_task(self, spec: TaskSpec, trajs: list[Trajectory]) -> None:
        for t in trajs:
            if t.task_id != spec.task_id:
                raise DatasetError(f"trajectory task_id {t.task_id} != spec {spec.task_id}")
        self.specs[spec.task_id] = spec
        self.data[spec.task_id] = trajs

    def task_ids(self) -> list[int]:
        return sorted(self.specs)

    def spec(self, task_id: int) -> TaskSpec:
        return self.specs[task_id]

    def trajectories(self, task_id: int) -> list[Trajectory]:
        trajs = self.data.get(task_id)
        if not trajs:
            raise DatasetError(f"task {task_id} has no trajectories")
        return trajs

    def max_return(self, task_id: int) -> float:
        return max(t.total_return() for t in self.trajectories(task_id))

    # -- disk layout: <out>/manifest.json + <out>/datasets/task_<id>.jsonl --

    def save(self, out_dir: str) -> None:
        ds_dir = os.path.join(out_dir, "datasets")
        os.makedirs(ds_dir, exist_ok=True)
        tasks = []
        for tid in self.task_ids():
            spec = self.specs[tid]
            fname = f"task_{tid}.jsonl"
            digest = save_dataset_jsonl(os.path.join(ds_dir, fname), self.data[tid])
            entry = {
                "task_id": tid,
                "family": spec.family,
                "parameter": [float(_fmt(p)) for p in spec.parameter],
                "state_dim": spec.state_dim,
                "action_dim": spec.action_dim,
                "episode_len": spec.episode_len,
                "discount": spec.discount,
                "n_traj": len(self.data[tid]),
                "dataset_file": f"datasets/{fname}",
                "dataset_sha256": digest,
            }
            if spec.score_range is not None:
                entry["score_range"] = [float(_fmt(spec.score_range[0])),
                                        float(_fmt(spec.score_range[1]))]
                entry["score_provenance"] = {
                    "r_max": "noise-free scripted controller, mean return",
                    "r_min": "uniform random policy, mean return",
                }
            if "difficulties" in self.meta and str(tid) in self.meta["difficulties"]:
                entry["difficulty"] = self.meta["difficulties"][str(tid)]
            tasks.append(entry)
        manifest = {
            "format_version": 1,
            "dt": DT,
            "v_max": V_MAX,
            "controller_gains": GAINS,
            "difficulty_proxy": "100 minus the mean normalized score of the "
                                "dataset trajectories (higher is harder)",
            **{k: v for k, v in self.meta.items() if k != "difficulties"},
            "tasks": tasks,
        }
        with open(os.path.join(out_dir, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, out_dir: str) -> "DatasetStore":
        mpath = os.path.join(out_dir, "manifest.json")
        if not os.path.exists(mpath):
            raise DatasetError(f"no manifest at {mpath}")
        with open(mpath) as f:
            manifest = json.load(f)
        store = cls()
        store.meta = {k: v for k, v in manifest.items() if k not in ("tasks", "format_version")}
        for entry in manifest["tasks"]:
            spec = TaskSpec(
                task_id=entry["task_id"], family=entry["family"],
                parameter=tuple(entry["parameter"]), episode_len=entry["episode_len"],
                discount=entry["discount"],
                score_range=tuple(entry["score_range"]) if "score_range" in entry else None,
            )
            trajs = load_dataset_jsonl(os.path.join(out_dir, entry["dataset_file"]))
            store.add_task(spec, trajs)
            if "difficulty" in entry:
                store.meta.setdefault("difficulties", {})[str(spec.task_id)] = \
                    entry["difficulty"]
        return store


# ---------------------------------------------------------------------------
# prompt sampling


def top_quartile(trajs: list[Trajectory]) -> list[Trajectory]:
    """Trajectories in the top return quartile (at least one)."""
    order = sorted(range(len(trajs)), key=lambda i: (-trajs[i].total_return(), i))
    k = max(1, math.ceil(len(trajs) / 4))
    return [trajs[i] for i in order[:k]]


def _prompt_window(trajs: list[Trajectory], kstar: int, u_traj: float, u_start: float):
    if not trajs:
        raise DatasetError("sample_prompt: empty dataset")
    T = trajs[0].T
    if kstar > T:
        raise DatasetError(f"sample_prompt: Kstar {kstar} > episode length {T}")
    pool = top_quartile(trajs)
    traj = pool[min(int(u_traj * len(pool)), len(pool) - 1)]
    n_starts = T - kstar + 1
    start = min(int(u_start * n_starts), n_starts - 1)
    sl = slice(start, start + kstar)
    return traj, sl


def sample_prompt(trajs: list[Trajectory], kstar: int, seed: int) -> Trajectory:
    """A contiguous Kstar-step window from a top-quartile trajectory."""
    gen = _rng.stream(_rng.PROMPT, seed)
    traj, sl = _prompt_window(trajs, kstar, gen.random(), gen.random())
    return Trajectory(traj.states[sl], traj.actions[sl], traj.rewards[sl],
                      traj.rtg[sl], traj.timesteps[sl], traj.task_id)


# ---------------------------------------------------------------------------
# training batches


def sample_batch(store: DatasetStore, task_ids: list[int], cfg, batch_size: int,
                 gen: np.random.Generator, fixed_task: int | None = None) -> SegmentBatch:
    """Training batch: uniform over tasks, then uniform over windows.

    Draws a fixed plan of uniforms per element (task, trajectory, window
    start, prompt trajectory, prompt start) so two tasks with identical
    datasets see identical batches when fixed_task is used with a fresh
    generator.
    """
    Ks, K = cfg.prompt_Kstar, cfg.context_K
    s_max, a_max = cfg.max_state_dim, cfg.max_action_dim
    B = batch_size
    draws = gen.random((B, 5))

    out = SegmentBatch(
        prompt_rtg=np.zeros((B, Ks), np.float32),
        prompt_states=np.zeros((B, Ks, s_max), np.float32),
        prompt_actions=np.zeros((B, Ks, a_max), np.float32),
        prompt_timesteps=np.zeros((B, Ks), np.int64),
        prompt_valid=np.ones((B, Ks), np.float32),
        rtg=np.zeros((B, K), np.float32),
        states=np.zeros((B, K, s_max), np.float32),
        actions=np.zeros((B, K, a_max), np.float32),
        timesteps=np.zeros((B, K), np.int64),
        valid=np.ones((B, K), np.float32),
        action_mask=np.zeros((B, a_max), np.float32),
        task_ids=np.zeros(B, np.int64),
    )
    for b in range(B):
        u_task, u_traj, u_start, u_pt, u_ps = draws[b]
        tid = fixed_task if fixed_task is not None \
            else task_ids[min(int(u_task * len(task_ids)), len(task_ids) - 1)]
        spec = store.spec(tid)
        trajs = store.trajectories(tid)
        traj = trajs[min(int(u_traj * len(trajs)), len(trajs) - 1)]
        if traj.T < K:
            raise DatasetError(f"context_K {K} exceeds trajectory length {traj.T}")
        n_starts = traj.T - K + 1
        start = min(int(u_start * n_starts), n_starts - 1)
        sl = slice(start, start + K)
        sd, ad_ = spec.state_dim, spec.action_dim
        out.rtg[b] = traj.rtg[sl]
        out.states[b, :, :sd] = traj.states[sl]
        out.actions[b, :, :ad_] = traj.actions[sl]
        out.timesteps[b] = traj.timesteps[sl]
        out.action_mask[b, :ad_] = 1.0
        out.task_ids[b] = tid
        if Ks > 0:
            ptraj, psl = _prompt_window(trajs, Ks, u_pt, u_ps)
            out.prompt_rtg[b] = ptraj.rtg[psl]
            out.prompt_states[b, :, :sd] = ptraj.states[psl]
            out.prompt_actions[b, :, :ad_] = ptraj.actions[psl]
            out.prompt_timesteps[b] = ptraj.timesteps[psl]
    return out
