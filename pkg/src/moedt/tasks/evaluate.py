"""Rollout evaluation.

Episodes are rolled out with the target return-to-go initialized to the
task's R_max (or the best dataset return, by config), decremented by received
rewards; the prompt is re-sampled per episode from the task's dataset. Model
evaluation batches all episodes of a task through the network together, which
is safe because the dynamics are deterministic and episodes never terminate
early.
"""
from __future__ import annotations

import numpy as np

from .. import rng as _rng
from ..errors import RoutingError, ScoreRangeError
from ..model import RoutingMode
from ..model.tokens import SegmentBatch
from .controllers import controller_action, random_action
from .data import DatasetStore, _prompt_window, rollout
from .env import reset_state, step_env_batch
from .scoring import normalized_score
from .suite import TaskSpec

# sub-stream tag distinguishing eval episodes from score-range oracles
_EP_STREAM = 2


def evaluate_actors(make_actor, task: TaskSpec, n_episodes: int, seed: int):
    """Evaluate a per-episode actor factory; returns (mean score, returns).

    make_actor(task, gen) -> callable(state, t) -> action. Wraps scripted
    controllers or random policies as evaluable "models".
    """
    scores, returns = [], []
    for ep in range(n_episodes):
        gen = _rng.stream(_rng.EVAL, seed, task.task_id, ep, _EP_STREAM)
        actor = make_actor(task, gen)
        traj = rollout(task, actor, gen)
        returns.append(traj.total_return())
        scores.append(normalized_score(task, returns[-1]))
    return float(np.mean(scores)), returns


def controller_actor(task: TaskSpec, gen: np.random.Generator):
    return lambda s, t: controller_action(task, s)


def random_actor(task: TaskSpec, gen: np.random.Generator):
    return lambda s, t: random_action(task, gen)


def resolve_mode(mode: RoutingMode, task_id: int, group_map=None) -> tuple:
    """Resolve an eval-time routing mode to a forward mode.

    oracle requires a task -> group assignment and becomes hard(group).
    Returns (forward_mode, oracle_expert_ids_or_None).
    """
    if mode.kind == "oracle":
        if group_map is None:
            raise RoutingError("oracle evaluation requires a group assignment")
        return RoutingMode.hard(int(group_map[task_id])), None
    return mode, None


def evaluate_model(model, params, store: DatasetStore, task_id: int,
                   mode: RoutingMode, n_episodes: int, seed: int,
                   group_map=None, target: str = "range_max"):
    """Mean normalized score of the model on one task; batched episodes."""
    task = store.spec(task_id)
    if task.score_range is None:
        raise ScoreRangeError(f"task {task_id} has no score_range")
    fwd_mode, _ = resolve_mode(mode, task_id, group_map)
    cfg = model.cfg
    Ks, K = cfg.prompt_Kstar, cfg.context_K
    sd, ad_ = task.state_dim, task.action_dim
    E, T = n_episodes, task.episode_len
    trajs = store.trajectories(task_id)

    if target == "range_max":
        target0 = task.score_range[1]
    elif target == "dataset_max":
        target0 = store.max_return(task_id)
    else:
        raise ScoreRangeError(f"unknown eval target {target!r}")

    # per-episode initial states and prompts
    cur = np.zeros((E, sd))
    p_rtg = np.zeros((E, Ks), np.float32)
    p_states = np.zeros((E, Ks, cfg.max_state_dim), np.float32)
    p_actions = np.zeros((E, Ks, cfg.max_action_dim), np.float32)
    p_timesteps = np.zeros((E, Ks), np.int64)
    for ep in range(E):
        gen = _rng.stream(_rng.EVAL, seed, task_id, ep, _EP_STREAM)
        cur[ep] = reset_state(task, gen)
        if Ks > 0:
            ptraj, psl = _prompt_window(trajs, Ks, gen.random(), gen.random())
            p_rtg[ep] = ptraj.rtg[psl]
            p_states[ep, :, :sd] = ptraj.states[psl]
            p_actions[ep, :, :ad_] = ptraj.actions[psl]
            p_timesteps[ep] = ptraj.timesteps[psl]

    states_h = np.zeros((E, T, sd))
    actions_h = np.zeros((E, T, ad_))
    rewards_h = np.zeros((E, T))
    mask_dims = np.zeros((E, cfg.max_action_dim), np.float32)
    mask_dims[:, :ad_] = 1.0

    for t in range(T):
        states_h[:, t] = cur
        n_real = min(t + 1, K)
        pad = K - n_real
        lo = t - n_real + 1
        seg_states = np.zeros((E, K, cfg.max_state_dim), np.float32)
        seg_actions = np.zeros((E, K, cfg.max_action_dim), np.float32)
        seg_rtg = np.zeros((E, K), np.float32)
        seg_ts = np.zeros((E, K), np.int64)
        seg_valid = np.zeros((E, K), np.float32)
        seg_states[:, pad:, :sd] = states_h[:, lo:t + 1]
        seg_actions[:, pad:, :ad_] = actions_h[:, lo:t + 1]  # row t is still zero
        cum = np.concatenate([np.zeros((E, 1)), np.cumsum(rewards_h, axis=1)], axis=1)
        seg_rtg[:, pad:] = (target0 - cum[:, lo:t + 1]).astype(np.float32)
        seg_ts[:, pad:] = np.arange(lo, t + 1)[None, :]
        seg_valid[:, pad:] = 1.0
        batch = SegmentBatch(
            prompt_rtg=p_rtg, prompt_states=p_states, prompt_actions=p_actions,
            prompt_timesteps=p_timesteps,
            prompt_valid=np.ones((E, Ks), np.float32),
            rtg=seg_rtg, states=seg_states, actions=seg_actions,
            timesteps=seg_ts, valid=seg_valid, action_mask=mask_dims,
            task_ids=np.full(E, task_id, np.int64),
        )
        pred = model.predict_last(params, batch, mode=fwd_mode)
        act = np.clip(pred[:, :ad_].astype(np.float64), -1.0, 1.0)
        actions_h[:, t] = act
        cur, r = step_env_batch(task, cur, act)
        rewards_h[:, t] = r

    returns = rewards_h.sum(axis=1)
    scores = [normalized_score(task, float(R)) for R in returns]
    return float(np.mean(scores)), returns.tolist()
