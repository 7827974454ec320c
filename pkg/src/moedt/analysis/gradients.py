"""Per-task gradient sweeps, similarity/conflict, agreement vectors.

All diagnostics here are read-only: model parameters are bit-identical before
and after each call. Gradients are flattened over an explicit parameter scope
in sorted name order and accumulated in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .. import rng as _rng
from ..errors import DatasetError, GroupingError
from ..tasks.data import DatasetStore, sample_batch

COSINE_TOL = 1e-12  # below this norm a cosine is undefined


@dataclass
class GradientReport:
    """Averaged per-task gradients over a fixed parameter scope."""

    per_task: dict[int, np.ndarray]  # task_id -> flat float64 gradient
    mean_gradient: np.ndarray
    scope: str
    param_names: list[str]
    batches_per_task: int

    def task_ids(self) -> list[int]:
        return sorted(self.per_task)

    def to_json(self) -> dict:
        return {
            "scope": self.scope,
            "param_names": self.param_names,
            "batches_per_task": self.batches_per_task,
            "per_task": {str(t): g.tolist() for t, g in self.per_task.items()},
            "mean_gradient": self.mean_gradient.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GradientReport":
        return cls(
            per_task={int(t): np.asarray(g, np.float64) for t, g in obj["per_task"].items()},
            mean_gradient=np.asarray(obj["mean_gradient"], np.float64),
            scope=obj["scope"],
            param_names=list(obj["param_names"]),
            batches_per_task=int(obj["batches_per_task"]),
        )


@dataclass
class SimilarityResult:
    """Mean cosine between task gradients and their mean.

    defined is False when the mean gradient norm is below tolerance or no
    task cosine is defined; value/conflict are None in that case rather than
    a silent 0. Tasks whose own gradient norm is below tolerance are listed
    in excluded_tasks and left out of the average.
    """

    value: float | None
    conflict: float | None
    defined: bool
    excluded_tasks: list[int] = field(default_factory=list)


def per_task_gradients(model, params, store: DatasetStore, task_ids,
                       batches_per_task: int = 8, scope: str = "all_backbone",
                       seed: int = 0, batch_size: int = 16,
                       mode=None) -> GradientReport:
    """Average minibatch gradients of the training loss, per task.

    Every task uses a freshly keyed generator with the same seed, so two
    tasks with byte-identical datasets produce bit-identical gradients. The
    forward pass runs without dropout: this measures the clean loss surface.
    """
    task_ids = sorted(task_ids)
    if not task_ids:
        raise DatasetError("per_task_gradients: no tasks")
    if batches_per_task < 1:
        raise GroupingError("batches_per_task must be >= 1")
    names = params.scope_names(scope)
    sizes = [params[n].data.size for n in names]
    total = int(np.sum(sizes))
    per_task: dict[int, np.ndarray] = {}
    with params.trainable_scope(names):
        for tid in task_ids:
            store.trajectories(tid)  # raises on empty datasets up front
            gen = _rng.stream(_rng.TASK_GRADS, seed)
            acc = np.zeros(total, np.float64)
            for _ in range(batches_per_task):
                batch = sample_batch(store, [tid], model.cfg, batch_size, gen,
                                     fixed_task=tid)
                _, grads = ad.forward_backward(
                    lambda: model.loss(params, batch, mode=mode, train=False),
                    params)
                parts = []
                for n, sz in zip(names, sizes):
                    g = grads.get(n)
                    parts.append(np.zeros(sz) if g is None else
                                 np.asarray(g, np.float64).ravel())
                acc += np.concatenate(parts)
            per_task[tid] = acc / batches_per_task
    mean = np.zeros(total, np.float64)
    for tid in task_ids:
        mean += per_task[tid]
    mean /= len(task_ids)
    return GradientReport(per_task=per_task, mean_gradient=mean, scope=scope,
                          param_names=names, batches_per_task=batches_per_task)


def gradient_similarity(report: GradientReport, tol: float = COSINE_TOL) -> SimilarityResult:
    """Mean cos(g_i, mean gradient); conflict = 1 - similarity."""
    mean = report.mean_gradient
    mean_norm = float(np.linalg.norm(mean))
    if mean_norm <= tol:
        return SimilarityResult(None, None, False,
                                excluded_tasks=report.task_ids())
    cosines, excluded = [], []
    for tid in report.task_ids():
        g = report.per_task[tid]
        norm = float(np.linalg.norm(g))
        if norm <= tol:
            excluded.append(tid)
            continue
        cosines.append(float(g @ mean) / (norm * mean_norm))
    if not cosines:
        return SimilarityResult(None, None, False, excluded_tasks=excluded)
    value = float(np.mean(cosines))
    return SimilarityResult(value, 1.0 - value, True, excluded_tasks=excluded)


@dataclass
class AgreementVector:
    task_id: int
    values: np.ndarray  # float64, same length as the gradient scope


def agreement_vectors(report: GradientReport, normalize: bool = False) -> list[AgreementVector]:
    """Per-coordinate alignment a_i = g_i * mean gradient (elementwise).

    normalize=True rescales each vector to unit L2 norm (zero vectors are
    left as-is); off by default.
    """
    out = []
    for tid in report.task_ids():
        a = report.per_task[tid] * report.mean_gradient
        if normalize:
            norm = float(np.linalg.norm(a))
            if norm > 0.0:
                a = a / norm
        out.append(AgreementVector(tid, a))
    return out
