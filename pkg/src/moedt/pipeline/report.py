"""Aggregate a run directory into a single report.json.

Collects the config hash, the dataset manifest, the task grouping, checkpoint
headers, a condensed view of the metrics log, and every eval_*.json found in
the run root, then repeats the same sweep for each variant directory under
ablations/. Variants that branch from parent checkpoints rather than training
their own copies (the frozen-expert control branches from the parent stage-2
checkpoint, the oracle evaluation reads the parent stage-3 checkpoint
directly) are visible through the "checkpoint" field each eval document
carries, so the provenance of every score survives aggregation.
"""
from __future__ import annotations

import glob
import json
import os

from ..errors import PipelineError
from .checkpoint import read_meta
from .config import ExperimentConfig, config_hash, config_to_dict
from .metrics import read_rows
from .stages import RunPaths

# how each variant relates to the parent run's checkpoints; every variant
# that keeps the staged protocol at full width branches from the shared
# stage-1 backbone rather than retraining it
_REUSE_NOTES = {
    "e2e": "trains from scratch; no parent checkpoints",
    "no_grouping": "starts from the parent stage1 checkpoint",
    "no_expert_freeze": "starts from a copy of the parent stage2 checkpoint "
                        "(itself derived from the shared stage1)",
    "oracle_eval": "reads the parent stage3 checkpoint directly; no training",
    "topk": "starts from a copy of the parent stage2 checkpoint "
            "(itself derived from the shared stage1)",
    "small": "retrains all stages at reduced width; parent checkpoints "
             "have incompatible shapes",
}


def _load_json(path: str):
    with open(path) as f:
        return json.load(f)


def _eval_docs(root: str) -> dict:
    """All eval_<mode>.json documents directly under root, keyed by mode."""
    docs = {}
    for path in sorted(glob.glob(os.path.join(root, "eval_*.json"))):
        doc = _load_json(path)
        docs[doc.get("mode", os.path.basename(path)[5:-5])] = doc
    return docs


def _checkpoint_metas(root: str) -> dict:
    metas = {}
    for path in sorted(glob.glob(os.path.join(root, "checkpoints", "*.ckpt"))):
        name = os.path.basename(path)[:-5]
        metas[name] = read_meta(path)
    return metas


def _metrics_summary(path: str) -> dict:
    """First/last loss per training stage and the stage-1 similarity series."""
    if not os.path.exists(path):
        return {}
    rows = read_rows(path)
    out: dict = {}
    for stage in ("1", "2", "3"):
        losses = [float(r["loss"]) for r in rows
                  if r["stage"] == stage and r["loss"] is not None]
        if losses:
            out[f"stage{stage}"] = {"rows": len(losses),
                                    "first_loss": losses[0],
                                    "last_loss": losses[-1]}
    sims = [(int(r["step"]), float(r["grad_similarity"])) for r in rows
            if r["stage"] == "1" and r["grad_similarity"] is not None]
    if sims:
        values = [v for _, v in sims]
        out["stage1_similarity"] = {
            "samples": len(values),
            "steps": [s for s, _ in sims],
            "values": values,
            "min": min(values),
            "max": max(values),
        }
    return out


def _scan_dir(root: str) -> dict:
    entry: dict = {
        "checkpoints": _checkpoint_metas(root),
        "evaluations": _eval_docs(root),
        "metrics": _metrics_summary(os.path.join(root, "metrics.csv")),
    }
    groups_path = os.path.join(root, "groups.json")
    if os.path.exists(groups_path):
        entry["groups"] = _load_json(groups_path)
    summary_path = os.path.join(root, "summary.json")
    if os.path.exists(summary_path):
        entry["summary"] = _load_json(summary_path)
    return entry


def collect_report(cfg: ExperimentConfig, paths: RunPaths) -> dict:
    """Assemble the report document for a run directory; read-only."""
    if not os.path.exists(paths.manifest):
        raise PipelineError(f"nothing to report under {paths.root}; "
                            f"run gen-data first")
    doc: dict = {
        "config_hash": config_hash(cfg),
        "config": config_to_dict(cfg),
        "dataset": _load_json(paths.manifest),
    }
    doc.update(_scan_dir(paths.root))
    ab_root = os.path.join(paths.root, "ablations")
    ablations = {}
    if os.path.isdir(ab_root):
        for name in sorted(os.listdir(ab_root)):
            sub = os.path.join(ab_root, name)
            if os.path.isdir(sub):
                entry = _scan_dir(sub)
                kind = "topk" if name.startswith("topk") else name
                if kind in _REUSE_NOTES:
                    entry["checkpoint_reuse"] = _REUSE_NOTES[kind]
                ablations[name] = entry
    if ablations:
        doc["ablations"] = ablations
    return doc


def write_report(cfg: ExperimentConfig, paths: RunPaths) -> str:
    doc = collect_report(cfg, paths)
    with open(paths.report, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    return paths.report
