"""Command-line front end: one subcommand per pipeline step.

Every subcommand takes --config <path> plus optional --seed and --out
overrides, loads the experiment config, and calls the corresponding library
function. State lives entirely in the output directory, so steps can run in
separate invocations (or separate machines sharing a filesystem) as long as
they run in stage order.
"""
from __future__ import annotations

import argparse
import sys

from .errors import MoedtError
from .model import RoutingMode
from .pipeline import (MetricsWriter, RunPaths, compute_groups, evaluate_suite,
                       generate_data, load_config, load_groups, load_store,
                       run_ablation, stage1_train, stage2_train_experts,
                       stage3_train_router, write_report)


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="experiment config JSON")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sub.add_argument("--out", default=None,
                     help="override the config output directory")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="moedt",
        description="three-stage mixture-of-experts decision transformer "
                    "workbench")
    subs = p.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("gen-data", "score task ranges and write the offline datasets"),
        ("train-backbone", "stage 1: train the shared backbone on all tasks"),
        ("train-experts", "stage 2: train one expert per task group"),
        ("train-router", "stage 3: train the router, everything else frozen"),
        ("report", "aggregate run artifacts into report.json"),
    ):
        _common(subs.add_parser(name, help=help_text))

    g = subs.add_parser("group-tasks", help="partition tasks into groups")
    _common(g)
    g.add_argument("--method", choices=("random", "gradient"), default=None,
                   help="override the configured grouping method")

    e = subs.add_parser("evaluate", help="roll out the suite and score it")
    _common(e)
    e.add_argument("--mode", default="dense",
                   help="dense | topk:<k> | oracle | backbone")

    a = subs.add_parser("ablate", help="run one ablation variant")
    _common(a)
    a.add_argument("--variant", required=True,
                   help="e2e | no_grouping | no_expert_freeze | oracle_eval "
                        "| topk:<k> | small")
    return p


def _setup(args) -> tuple:
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
    return cfg, RunPaths(cfg.output_dir).ensure()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, paths = _setup(args)
        if args.command == "gen-data":
            store = generate_data(cfg, paths)
            print(f"wrote {len(store.task_ids())} task datasets under "
                  f"{paths.root} (manifest: {paths.manifest})")
        elif args.command == "train-backbone":
            store = load_store(paths)
            out = stage1_train(cfg, store, paths,
                               MetricsWriter(paths.metrics, cfg.seed))
            tag = "stopped early" if out["stopped_early"] else "ran to budget"
            print(f"stage 1 {tag}: selected step {out['selected_step']} "
                  f"of {out['final_step']} -> {paths.ckpt('stage1')}")
        elif args.command == "group-tasks":
            store = load_store(paths)
            groups = compute_groups(cfg, store, paths, method=args.method)
            sizes = [len(groups.tasks_in(g)) for g in range(groups.n_groups)]
            print(f"{groups.method} grouping into {groups.n_groups} groups "
                  f"(sizes {sizes}) -> {paths.groups}")
        elif args.command == "train-experts":
            store = load_store(paths)
            groups = load_groups(paths)
            stage2_train_experts(cfg, store, paths,
                                 MetricsWriter(paths.metrics, cfg.seed), groups)
            print(f"stage 2 trained {cfg.moe.n_experts} experts -> "
                  f"{paths.ckpt('stage2')}")
        elif args.command == "train-router":
            store = load_store(paths)
            stage3_train_router(cfg, store, paths,
                                MetricsWriter(paths.metrics, cfg.seed))
            print(f"stage 3 trained the router -> {paths.ckpt('stage3')}")
        elif args.command == "evaluate":
            store = load_store(paths)
            mode = RoutingMode.parse(args.mode)
            doc = evaluate_suite(cfg, store, paths,
                                 MetricsWriter(paths.metrics, cfg.seed), mode)
            for tid in sorted(doc["per_task"], key=int):
                print(f"  task {tid}: {doc['per_task'][tid]:.2f}")
            print(f"{doc['mode']} mean normalized score {doc['mean']:.2f} "
                  f"({doc['checkpoint']} checkpoint, "
                  f"{doc['eval_episodes']} episodes/task)")
        elif args.command == "ablate":
            res = run_ablation(cfg, args.variant, paths)
            print(f"variant {args.variant}: mean normalized score "
                  f"{res['eval']['mean']:.2f}")
        elif args.command == "report":
            print(f"wrote {write_report(cfg, paths)}")
    except MoedtError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
