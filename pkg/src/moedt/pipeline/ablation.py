"""Ablation variants, each sharing the parent run's datasets and eval seeds.

e2e               backbone+experts+router trained jointly from scratch for
                  the summed three-stage budget (dense routing, no freezing).
no_grouping       parent stage-1 backbone, then experts and router trained
                  jointly on all tasks (no task grouping, backbone frozen).
no_expert_freeze  stage 3 rerun with experts left trainable.
oracle_eval       no training; evaluates the parent stage-3 model with
                  per-task hard expert selection and reports the dense gap.
topk:<k>          router retrained from the parent stage-2 checkpoint under
                  top-k routing, then evaluated with top-k.
small             the full three-stage protocol at half width.

Variants that reuse parent artifacts fail with a clear error when the parent
stage has not run. All variants write the standard metrics/eval files into
ablations/<variant>/ so curves and scores are directly comparable.
"""
from __future__ import annotations

import json
import os
from dataclasses import replace

import numpy as np

from .. import autodiff as ad
from .. import rng as _rng
from ..analysis import gradient_similarity, per_task_gradients
from ..errors import PipelineError
from ..model import RoutingMode
from ..model.moe import attach_experts, attach_router, freeze
from ..optim import adam_init, adam_step
from ..params import BACKBONE, expert_component
from ..tasks.data import sample_batch
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_hash
from .metrics import MetricsWriter
from .stages import (_BATCH_JOINT, RunPaths, build_model, evaluate_suite,
                     load_groups, load_store, stage1_train, stage2_train_experts,
                     stage3_train_router, compute_groups)

VARIANTS = ("e2e", "no_grouping", "no_expert_freeze", "oracle_eval", "small")


def variant_paths(parent: RunPaths, variant: str) -> RunPaths:
    sub = RunPaths(os.path.join(parent.root, "ablations",
                                variant.replace(":", "_")))
    return sub.ensure()


def _parent_ckpt(parent: RunPaths, name: str, variant: str) -> str:
    path = parent.ckpt(name)
    if not os.path.exists(path):
        raise PipelineError(f"variant {variant} reuses the parent {name} "
                            f"checkpoint; run the main pipeline first")
    return path


def _joint_train(cfg, model, params, store, metrics, steps: int,
                 measure_expert_sim: bool) -> None:
    """Dense-mode joint training loop shared by e2e / no_grouping.

    Logged as stage 2 so its curves line up against grouped expert training.
    When measure_expert_sim is set, each sample averages expert-scope
    similarity over all experts into one row (tasks are not partitioned, so
    there is no per-expert task set to attribute).
    """
    tr = cfg.training
    task_ids = store.task_ids()
    opt = adam_init(params, tr.lr)
    gen = _rng.stream(_rng.BATCH, cfg.seed, _BATCH_JOINT)
    mode = RoutingMode.dense()
    for step in range(steps):
        sim = None
        if measure_expert_sim and step % tr.sim_log_interval == 0:
            vals = []
            for j in range(cfg.moe.n_experts):
                rep = per_task_gradients(model, params, store, task_ids,
                                         batches_per_task=tr.batches_per_task,
                                         scope=expert_component(j),
                                         seed=cfg.seed, batch_size=tr.batch_size,
                                         mode=mode)
                res = gradient_similarity(rep)
                if res.defined:
                    vals.append(res.value)
            sim = float(np.mean(vals)) if vals else None
        batch = sample_batch(store, task_ids, model.cfg, tr.batch_size, gen)
        loss, grads = ad.forward_backward(
            lambda: model.loss(params, batch, mode=mode, train=True,
                               seed=cfg.seed, step=step), params)
        adam_step(params, grads, opt)
        if sim is not None:
            metrics.emit(step, 2, loss=loss, grad_similarity=sim,
                         grad_conflict=1.0 - sim)
        elif step % tr.loss_log_interval == 0:
            metrics.emit(step, 2, loss=loss)


def _finish(paths: RunPaths, result: dict) -> dict:
    """Write a compact summary.json (eval docs reduced to their means)."""
    doc = {}
    for key, val in result.items():
        if isinstance(val, dict) and "per_task" in val:
            doc[key] = {"mode": val["mode"], "mean": val["mean"],
                        "checkpoint": val["checkpoint"]}
        else:
            doc[key] = val
    with open(os.path.join(paths.root, "summary.json"), "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    return result


def run_ablation(cfg: ExperimentConfig, variant: str, parent: RunPaths) -> dict:
    tr = cfg.training
    store = load_store(parent)
    kind, _, arg = variant.partition(":")
    if kind not in VARIANTS and kind != "topk":
        raise PipelineError(f"unknown variant {variant!r} "
                            f"(one of {VARIANTS + ('topk:<k>',)})")
    paths = variant_paths(parent, variant)
    metrics = MetricsWriter(paths.metrics, cfg.seed)
    chash = config_hash(cfg)

    if kind == "e2e":
        model = build_model(cfg, with_moe=True)
        params = model.init_params(cfg.seed)
        attach_experts(params, cfg.model, cfg.moe, preserve=False, seed=cfg.seed)
        attach_router(params, cfg.model, cfg.moe, seed=cfg.seed)
        freeze(params, set())
        # same optimizer-step budget as the staged protocol counts: the
        # expert stage contributes steps_stage2 once (its jobs are parallel)
        steps = tr.steps_stage1 + tr.steps_stage2 + tr.steps_stage3
        _joint_train(cfg, model, params, store, metrics, steps,
                     measure_expert_sim=False)
        save_checkpoint(params, {"stage": 3, "variant": "e2e", "step": steps,
                                 "config_hash": chash, "seed": cfg.seed},
                        paths.ckpt("stage3"))
        ev = evaluate_suite(cfg, store, paths, metrics, RoutingMode.dense())
        return _finish(paths, {"variant": variant, "train_steps": steps,
                                "eval": ev})

    if kind == "no_grouping":
        params, _ = load_checkpoint(_parent_ckpt(parent, "stage1", variant))
        model = build_model(cfg, with_moe=True)
        attach_experts(params, cfg.model, cfg.moe, preserve=True)
        attach_router(params, cfg.model, cfg.moe, seed=cfg.seed)
        freeze(params, {BACKBONE})
        steps = tr.steps_stage2 + tr.steps_stage3
        _joint_train(cfg, model, params, store, metrics, steps,
                     measure_expert_sim=True)
        save_checkpoint(params, {"stage": 3, "variant": "no_grouping",
                                 "step": steps, "config_hash": chash,
                                 "seed": cfg.seed}, paths.ckpt("stage3"))
        ev = evaluate_suite(cfg, store, paths, metrics, RoutingMode.dense())
        return _finish(paths, {"variant": variant, "train_steps": steps,
                                "eval": ev})

    if kind == "no_expert_freeze":
        _parent_ckpt(parent, "stage2", variant)
        link = paths.ckpt("stage2")
        if not os.path.exists(link):
            p, m = load_checkpoint(parent.ckpt("stage2"))
            save_checkpoint(p, m, link)
        stage3_train_router(cfg, store, paths, metrics, freeze_experts=False)
        ev = evaluate_suite(cfg, store, paths, metrics, RoutingMode.dense())
        return _finish(paths, {"variant": variant, "eval": ev})

    if kind == "oracle_eval":
        _parent_ckpt(parent, "stage3", variant)
        groups = load_groups(parent)
        oracle = evaluate_suite(cfg, store, parent_eval_paths(parent, paths),
                                metrics, RoutingMode.oracle(), ckpt_name=None,
                                groups=groups)
        dense = evaluate_suite(cfg, store, parent_eval_paths(parent, paths),
                               metrics, RoutingMode.dense())
        gap = oracle["mean"] - dense["mean"]
        return _finish(paths, {"variant": variant, "eval": oracle,
                                "dense": dense, "oracle_minus_dense": gap})

    if kind == "topk":
        try:
            k = int(arg)
        except ValueError:
            raise PipelineError(f"bad top-k spec {variant!r}")
        if not 1 <= k <= cfg.moe.n_experts:
            raise PipelineError(f"topk k={k} outside [1, {cfg.moe.n_experts}]")
        _parent_ckpt(parent, "stage2", variant)
        link = paths.ckpt("stage2")
        if not os.path.exists(link):
            p, m = load_checkpoint(parent.ckpt("stage2"))
            save_checkpoint(p, m, link)
        stage3_train_router(cfg, store, paths, metrics, mode=RoutingMode.topk(k))
        ev = evaluate_suite(cfg, store, paths, metrics, RoutingMode.topk(k))
        return _finish(paths, {"variant": variant, "eval": ev})

    # small: half-width model, full protocol on the shared datasets
    model_cfg = replace(cfg.model, hidden_dim=max(8, cfg.model.hidden_dim // 2),
                        n_heads=max(1, cfg.model.n_heads // 2))
    small_cfg = replace(cfg, model=model_cfg, output_dir=paths.root)
    stage1_train(small_cfg, store, paths, metrics)
    groups = compute_groups(small_cfg, store, paths)
    stage2_train_experts(small_cfg, store, paths, metrics, groups)
    stage3_train_router(small_cfg, store, paths, metrics)
    ev = evaluate_suite(small_cfg, store, paths, metrics, RoutingMode.dense(),
                        groups=groups)
    return _finish(paths, {"variant": variant,
                            "hidden_dim": model_cfg.hidden_dim, "eval": ev})


def parent_eval_paths(parent: RunPaths, variant_dir: RunPaths) -> RunPaths:
    """Checkpoints from the parent run, outputs into the variant directory."""

    class _Split(RunPaths):
        def ckpt(self, name: str) -> str:
            return parent.ckpt(name)

    return _Split(variant_dir.root)
