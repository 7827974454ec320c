"""The three training stages, dataset generation, grouping, and evaluation.

Stage 1 trains the plain backbone on all tasks while sampling gradient
similarity, optionally stopping at the conflict peak. Stage 2 attaches
function-preserving experts and trains each one on its task group with hard
routing, everything else frozen; jobs are independent and run in expert
order. Stage 3 attaches the router and trains it alone under dense routing.

Expert jobs would parallelize cleanly (disjoint trainable sets, private
optimizer state); they run sequentially here so a single process stays
deterministic.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import rng as _rng
from ..analysis import (agreement_vectors, gradient_similarity, kmeans_grouping,
                        per_task_gradients, random_grouping, task_subset_sampler)
from ..analysis.grouping import GroupAssignment
from ..errors import PipelineError
from ..model import MoEConfig, RoutingMode
from ..model.moe import attach_experts, attach_router, freeze, has_experts, has_router
from ..model.net import PromptDT
from ..optim import adam_init, adam_step
from ..params import BACKBONE, ROUTER, expert_component
from ..tasks import estimate_score_range, evaluate_model, generate_dataset, make_suite
from ..tasks.data import DatasetStore, sample_batch
from ..tasks.scoring import normalized_score
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_hash
from .metrics import MetricsWriter

# batch-stream tags per training phase
_BATCH_S1, _BATCH_S2, _BATCH_S3, _BATCH_JOINT = 1, 2, 3, 4


@dataclass
class RunPaths:
    root: str

    @property
    def manifest(self) -> str:
        return os.path.join(self.root, "manifest.json")

    @property
    def metrics(self) -> str:
        return os.path.join(self.root, "metrics.csv")

    @property
    def groups(self) -> str:
        return os.path.join(self.root, "groups.json")

    @property
    def report(self) -> str:
        return os.path.join(self.root, "report.json")

    def ckpt(self, name: str) -> str:
        return os.path.join(self.root, "checkpoints", f"{name}.ckpt")

    def eval_json(self, mode: str) -> str:
        return os.path.join(self.root, f"eval_{mode.replace(':', '_')}.json")

    def ensure(self) -> "RunPaths":
        os.makedirs(os.path.join(self.root, "checkpoints"), exist_ok=True)
        return self


def build_model(cfg: ExperimentConfig, with_moe: bool) -> PromptDT:
    return PromptDT(cfg.model, cfg.moe if with_moe else None)


# ---------------------------------------------------------------------------
# data


def generate_data(cfg: ExperimentConfig, paths: RunPaths) -> DatasetStore:
    """Score ranges, datasets, difficulties, optional subset selection."""
    suite = make_suite(cfg.suite.name, cfg.suite.episode_len)
    store = DatasetStore()
    difficulties: dict[int, float] = {}
    for raw in suite:
        task = raw.with_range(*estimate_score_range(
            raw, n_episodes=cfg.suite.oracle_episodes, seed=cfg.seed))
        trajs = generate_dataset(task, cfg.suite.n_traj, cfg.seed)
        scores = [normalized_score(task, t.total_return()) for t in trajs]
        difficulties[task.task_id] = 100.0 - float(np.mean(scores))
        store.add_task(task, trajs)
    keep = sorted(store.task_ids())
    if cfg.suite.subset is not None:
        keep = task_subset_sampler(
            [store.spec(t) for t in store.task_ids()], difficulties,
            cfg.suite.subset.n, cfg.suite.subset.subset_seed)
        for tid in list(store.task_ids()):
            if tid not in keep:
                del store.specs[tid], store.data[tid]
    store.meta = {
        "suite": cfg.suite.name,
        "seed": cfg.seed,
        "n_traj": cfg.suite.n_traj,
        "oracle_episodes": cfg.suite.oracle_episodes,
        "subset": None if cfg.suite.subset is None else
                  {"n": cfg.suite.subset.n,
                   "subset_seed": cfg.suite.subset.subset_seed,
                   "task_ids": keep},
        "difficulties": {str(t): float("%.9g" % difficulties[t]) for t in keep},
    }
    paths.ensure()
    store.save(paths.root)
    return store


def load_store(paths: RunPaths) -> DatasetStore:
    if not os.path.exists(paths.manifest):
        raise PipelineError(f"no datasets under {paths.root}; "
                            f"run gen-data first")
    return DatasetStore.load(paths.root)


# ---------------------------------------------------------------------------
# stage 1: backbone


def stage1_train(cfg: ExperimentConfig, store: DatasetStore, paths: RunPaths,
                 metrics: MetricsWriter) -> dict:
    tr = cfg.training
    es = tr.early_stop
    model = build_model(cfg, with_moe=False)
    params = model.init_params(cfg.seed)
    opt = adam_init(params, tr.lr)
    task_ids = store.task_ids()
    gen = _rng.stream(_rng.BATCH, cfg.seed, _BATCH_S1)
    half = es.smoothing_window // 2

    sim_values: list[float | None] = []
    sim_steps: list[int] = []
    snapshots: dict[int, tuple[int, np.ndarray]] = {}
    best_idx: int | None = None
    best_conflict = -np.inf
    worse_run = 0
    stopped_early = False

    for step in range(tr.steps_stage1):
        sampled = None
        if step % tr.sim_log_interval == 0:
            rep = per_task_gradients(model, params, store, task_ids,
                                     batches_per_task=tr.batches_per_task,
                                     scope=tr.sim_scope, seed=cfg.seed,
                                     batch_size=tr.batch_size)
            sampled = gradient_similarity(rep)
            j = len(sim_values)
            sim_values.append(sampled.value)
            sim_steps.append(step)
            snapshots[j] = (step, params.flatten().copy())
            if es.enabled and j - half >= 0:
                i = j - half  # newest index whose centered window is complete
                window = [v for v in sim_values[max(0, i - half):j + 1]
                          if v is not None]
                if window:
                    conflict = float(np.mean([1.0 - v for v in window]))
                    if conflict > best_conflict:
                        best_conflict, best_idx, worse_run = conflict, i, 0
                    else:
                        worse_run += 1
                        if worse_run >= es.patience:
                            stopped_early = True
            keep_from = len(sim_values) - (half + 1)
            for idx in [k for k in snapshots
                        if k < keep_from and k != best_idx]:
                del snapshots[idx]
        if stopped_early:
            break
        batch = sample_batch(store, task_ids, model.cfg, tr.batch_size, gen)
        loss, grads = ad.forward_backward(
            lambda: model.loss(params, batch, train=True, seed=cfg.seed,
                               step=step), params)
        adam_step(params, grads, opt)
        if sampled is not None:
            metrics.emit(step, 1, loss=loss, grad_similarity=sampled.value,
                         grad_conflict=sampled.conflict)
        elif step % tr.loss_log_interval == 0:
            metrics.emit(step, 1, loss=loss)

    final_step = step if stopped_early else tr.steps_stage1
    if es.enabled and best_idx is not None:
        selected_step, selected_vec = snapshots[best_idx]
        selected = params.copy()
        selected.assign(selected.unflatten(selected_vec))
    else:
        selected_step, selected = final_step, params
    chash = config_hash(cfg)
    save_checkpoint(selected, {"stage": 1, "step": selected_step,
                               "stopped_early": stopped_early,
                               "config_hash": chash, "seed": cfg.seed},
                    paths.ckpt("stage1"))
    save_checkpoint(params, {"stage": 1, "step": final_step,
                             "stopped_early": stopped_early, "final": True,
                             "config_hash": chash, "seed": cfg.seed},
                    paths.ckpt("stage1_final"))
    return {"selected_step": selected_step, "final_step": final_step,
            "stopped_early": stopped_early, "sim_steps": sim_steps,
            "similarity": sim_values}


# ---------------------------------------------------------------------------
# grouping


def compute_groups(cfg: ExperimentConfig, store: DatasetStore,
                   paths: RunPaths, method: str | None = None) -> GroupAssignment:
    method = method or cfg.grouping.method
    n = cfg.grouping.n_groups
    if method == "random":
        groups = random_grouping(store.task_ids(), n, cfg.seed)
    elif method == "gradient":
        ckpt = paths.ckpt("stage1")
        if not os.path.exists(ckpt):
            raise PipelineError("gradient grouping needs the stage-1 "
                                "checkpoint; run train-backbone first")
        params, _ = load_checkpoint(ckpt)
        model = build_model(cfg, with_moe=False)
        rep = per_task_gradients(model, params, store, store.task_ids(),
                                 batches_per_task=cfg.training.batches_per_task,
                                 scope=cfg.training.sim_scope, seed=cfg.seed,
                                 batch_size=cfg.training.batch_size)
        groups = kmeans_grouping(agreement_vectors(rep), n, cfg.seed)
    else:
        raise PipelineError(f"unknown grouping method {method!r}")
    with open(paths.groups, "w") as f:
        json.dump(groups.to_json(), f, indent=1, sort_keys=True)
        f.write("\n")
    return groups


def load_groups(paths: RunPaths) -> GroupAssignment:
    if not os.path.exists(paths.groups):
        raise PipelineError(f"no groups.json under {paths.root}; "
                            f"run group-tasks first")
    with open(paths.groups) as f:
        return GroupAssignment.from_json(json.load(f))


# ---------------------------------------------------------------------------
# stage 2: experts


def stage2_train_experts(cfg: ExperimentConfig, store: DatasetStore,
                         paths: RunPaths, metrics: MetricsWriter,
                         groups: GroupAssignment) -> dict:
    tr = cfg.training
    if groups.n_groups != cfg.moe.n_experts:
        raise PipelineError(f"{groups.n_groups} groups vs "
                            f"{cfg.moe.n_experts} experts")
    src = paths.ckpt("stage1")
    if not os.path.exists(src):
        raise PipelineError("stage 2 needs the stage-1 checkpoint")
    params, _ = load_checkpoint(src)
    model = build_model(cfg, with_moe=True)
    attach_experts(params, cfg.model, cfg.moe, preserve=True)
    sim_log: dict[int, list] = {}
    for j in range(cfg.moe.n_experts):
        tasks_j = groups.tasks_in(j)
        freeze(params, set(params.components()) - {expert_component(j)})
        opt = adam_init(params, tr.lr)
        gen = _rng.stream(_rng.BATCH, cfg.seed, _BATCH_S2, j)
        mode = RoutingMode.hard(j)
        sim_log[j] = []
        for local in range(tr.steps_stage2):
            gstep = j * tr.steps_stage2 + local
            sampled = None
            if local % tr.sim_log_interval == 0:
                rep = per_task_gradients(model, params, store, tasks_j,
                                         batches_per_task=tr.batches_per_task,
                                         scope=expert_component(j),
                                         seed=cfg.seed, batch_size=tr.batch_size,
                                         mode=mode)
                sampled = gradient_similarity(rep)
                sim_log[j].append((gstep, sampled.value))
            batch = sample_batch(store, tasks_j, model.cfg, tr.batch_size, gen)
            loss, grads = ad.forward_backward(
                lambda: model.loss(params, batch, mode=mode, train=True,
                                   seed=cfg.seed, step=gstep), params)
            adam_step(params, grads, opt)
            if sampled is not None:
                metrics.emit(gstep, 2, loss=loss, grad_similarity=sampled.value,
                             grad_conflict=sampled.conflict, expert_id=j)
            elif local % tr.loss_log_interval == 0:
                metrics.emit(gstep, 2, loss=loss, expert_id=j)
    save_checkpoint(params, {"stage": 2, "step": cfg.moe.n_experts * tr.steps_stage2,
                             "config_hash": config_hash(cfg), "seed": cfg.seed,
                             "groups_method": groups.method},
                    paths.ckpt("stage2"))
    return {"similarity_by_expert": sim_log}


# ---------------------------------------------------------------------------
# stage 3: router


def stage3_train_router(cfg: ExperimentConfig, store: DatasetStore,
                        paths: RunPaths, metrics: MetricsWriter,
                        freeze_experts: bool = True, in_ckpt: str = "stage2",
                        out_ckpt: str = "stage3",
                        mode: RoutingMode | None = None) -> dict:
    tr = cfg.training
    src = paths.ckpt(in_ckpt)
    if not os.path.exists(src):
        raise PipelineError(f"stage 3 needs the {in_ckpt} checkpoint")
    params, _ = load_checkpoint(src)
    if not has_experts(params):
        raise PipelineError(f"{in_ckpt} has no expert parameters")
    model = build_model(cfg, with_moe=True)
    if not has_router(params):
        attach_router(params, cfg.model, cfg.moe, seed=cfg.seed)
    frozen = {BACKBONE}
    if freeze_experts:
        frozen |= {c for c in params.components() if c.startswith("expert")}
    freeze(params, frozen)
    opt = adam_init(params, tr.lr)
    task_ids = store.task_ids()
    gen = _rng.stream(_rng.BATCH, cfg.seed, _BATCH_S3)
    mode = mode or RoutingMode.dense()
    for step in range(tr.steps_stage3):
        batch = sample_batch(store, task_ids, model.cfg, tr.batch_size, gen)
        loss, grads = ad.forward_backward(
            lambda: model.loss(params, batch, mode=mode, train=True,
                               seed=cfg.seed, step=step), params)
        adam_step(params, grads, opt)
        if step % tr.loss_log_interval == 0:
            metrics.emit(step, 3, loss=loss)
    save_checkpoint(params, {"stage": 3, "step": tr.steps_stage3,
                             "freeze_experts": freeze_experts,
                             "routing": str(mode),
                             "config_hash": config_hash(cfg), "seed": cfg.seed},
                    paths.ckpt(out_ckpt))
    return {"freeze_experts": freeze_experts, "routing": str(mode)}


# ---------------------------------------------------------------------------
# evaluation


def _eval_checkpoint_for(mode: RoutingMode, paths: RunPaths) -> str:
    """Most advanced checkpoint that supports the requested mode."""
    if mode.kind in ("dense", "topk"):
        order = ["stage3"]
    elif mode.kind == "oracle":
        order = ["stage3", "stage2"]
    else:  # backbone
        order = ["stage3", "stage2", "stage1"]
    for name in order:
        if os.path.exists(paths.ckpt(name)):
            return name
    raise PipelineError(f"no checkpoint supporting mode {mode} under "
                        f"{paths.root} (looked for {order})")


def evaluate_suite(cfg: ExperimentConfig, store: DatasetStore, paths: RunPaths,
                   metrics: MetricsWriter, mode: RoutingMode,
                   ckpt_name: str | None = None,
                   groups: GroupAssignment | None = None) -> dict:
    tr = cfg.training
    name = ckpt_name or _eval_checkpoint_for(mode, paths)
    params, meta = load_checkpoint(paths.ckpt(name))
    model = build_model(cfg, with_moe=has_experts(params))
    if mode.kind == "oracle" and groups is None and os.path.exists(paths.groups):
        groups = load_groups(paths)
    per_task = {}
    step = metrics.next_step("eval")
    for tid in store.task_ids():
        score, _ = evaluate_model(model, params, store, tid, mode,
                                  tr.eval_episodes, seed=cfg.seed,
                                  group_map=groups, target=tr.eval_target)
        per_task[tid] = score
        metrics.emit(step, "eval", mean_normalized_score=score)
        step += 1
    mean = float(np.mean(list(per_task.values())))
    metrics.emit(step, "eval", mean_normalized_score=mean)
    doc = {"mode": str(mode), "checkpoint": name,
           "eval_episodes": tr.eval_episodes, "eval_target": tr.eval_target,
           "per_task": {str(t): per_task[t] for t in sorted(per_task)},
           "mean": mean}
    with open(paths.eval_json(str(mode)), "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    return doc


# ---------------------------------------------------------------------------
# whole pipeline


def run_pipeline(cfg: ExperimentConfig, eval_modes=("dense",)) -> dict:
    """gen-data through stage 3 plus evaluations, under cfg.output_dir."""
    paths = RunPaths(cfg.output_dir).ensure()
    store = generate_data(cfg, paths)
    metrics = MetricsWriter(paths.metrics, cfg.seed)
    s1 = stage1_train(cfg, store, paths, metrics)
    groups = compute_groups(cfg, store, paths)
    stage2_train_experts(cfg, store, paths, metrics, groups)
    stage3_train_router(cfg, store, paths, metrics)
    evals = {}
    for m in eval_modes:
        mode = m if isinstance(m, RoutingMode) else RoutingMode.parse(m)
        evals[str(mode)] = evaluate_suite(cfg, store, paths, metrics, mode,
                                          groups=groups)
    return {"stage1": s1, "groups": groups.to_json(), "evals": evals}
