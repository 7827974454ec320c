"""Balanced task-subset sampling for task-count sweeps.

Subsets preserve the pool's family ratio (largest-remainder rounding) and
are rejection-sampled until their mean difficulty is within a band of the
pool mean, so smaller subsets are not accidentally easier.
"""
from __future__ import annotations

import numpy as np

from .. import rng as _rng
from ..errors import GroupingError
from ..tasks.suite import TaskSpec

MAX_DRAWS = 10_000
DIFFICULTY_BAND = 2.0  # score points


def family_quotas(pool: list[TaskSpec], n: int, domains: dict[int, str]) -> dict[str, int]:
    """Per-family counts for a size-n subset, largest-remainder rounding.

    Ties in remainders break by family order of first appearance in the pool.
    """
    order: list[str] = []
    counts: dict[str, int] = {}
    for spec in pool:
        fam = domains[spec.task_id]
        if fam not in counts:
            order.append(fam)
            counts[fam] = 0
        counts[fam] += 1
    total = len(pool)
    exact = {f: n * counts[f] / total for f in order}
    base = {f: int(np.floor(exact[f])) for f in order}
    leftover = n - sum(base.values())
    by_remainder = sorted(order, key=lambda f: (-(exact[f] - base[f]), order.index(f)))
    for f in by_remainder[:leftover]:
        base[f] += 1
    return base


def task_subset_sampler(pool: list[TaskSpec], difficulties: dict[int, float],
                        n: int, seed: int, domains: dict[int, str] | None = None,
                        max_draws: int = MAX_DRAWS,
                        band: float = DIFFICULTY_BAND) -> list[int]:
    """Sorted task ids of a balanced subset of size n."""
    if n < 1 or n > len(pool):
        raise GroupingError(f"subset size {n} outside [1, {len(pool)}]")
    missing = [t.task_id for t in pool if t.task_id not in difficulties]
    if missing:
        raise GroupingError(f"no difficulty recorded for tasks {missing}")
    if domains is None:
        domains = {t.task_id: t.family for t in pool}
    if n == len(pool):
        return sorted(t.task_id for t in pool)
    quotas = family_quotas(pool, n, domains)
    by_family: dict[str, list[int]] = {}
    for spec in pool:
        by_family.setdefault(domains[spec.task_id], []).append(spec.task_id)
    pool_mean = float(np.mean([difficulties[t.task_id] for t in pool]))
    gen = _rng.stream(_rng.SUBSET, seed)
    for _ in range(max_draws):
        subset: list[int] = []
        for fam, ids in by_family.items():
            take = quotas[fam]
            picks = gen.permutation(len(ids))[:take]
            subset.extend(ids[i] for i in picks)
        mean = float(np.mean([difficulties[t] for t in subset]))
        if abs(mean - pool_mean) <= band:
            return sorted(subset)
    raise GroupingError(
        f"no subset of size {n} within {band} difficulty points of the pool "
        f"mean after {max_draws} draws (family quotas {quotas} were "
        f"satisfiable by construction; the difficulty-balance constraint is "
        f"the binding one)")
