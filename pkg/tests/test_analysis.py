"""Conflict diagnostics: per-task gradients, similarity, grouping, subsets."""
import numpy as np
import pytest
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score

import moedt.rng as _rng
from moedt.analysis import (AgreementVector, GradientReport, adjusted_rand_index,
                            agreement_vectors, family_quotas, gradient_similarity,
                            kmeans_grouping, lloyd_kmeans, per_task_gradients,
                            random_grouping, task_subset_sampler)
from moedt.analysis.grouping import GroupAssignment
from moedt.errors import DatasetError, GroupingError
from moedt.model.net import PromptDT
from moedt.tasks import generate_dataset, make_suite
from moedt.tasks.data import DatasetStore, Trajectory
from moedt.tasks.suite import TaskSpec

from util import tiny_cfg


def report_from(vectors: dict[int, list]) -> GradientReport:
    per_task = {t: np.asarray(v, np.float64) for t, v in vectors.items()}
    mean = np.mean(list(per_task.values()), axis=0)
    return GradientReport(per_task=per_task, mean_gradient=mean, scope="all_backbone",
                          param_names=["w"], batches_per_task=1)


# ---------------------------------------------------------------------------
# similarity


def test_similarity_orthogonal_pair():
    res = gradient_similarity(report_from({0: [1.0, 0.0], 1: [0.0, 1.0]}))
    assert res.defined
    assert res.value == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-6)
    assert res.conflict == pytest.approx(1.0 - 1.0 / np.sqrt(2.0), abs=1e-6)


def test_similarity_identical_gradients():
    res = gradient_similarity(report_from({0: [1.0, 2.0], 1: [1.0, 2.0], 2: [1.0, 2.0]}))
    assert res.defined and res.value == pytest.approx(1.0, abs=1e-12)


def test_similarity_opposite_gradients_undefined():
    res = gradient_similarity(report_from({0: [1.0, 1.0], 1: [-1.0, -1.0]}))
    assert not res.defined
    assert res.value is None and res.conflict is None


def test_similarity_zero_task_gradient_excluded():
    res = gradient_similarity(report_from({0: [2.0, 0.0], 1: [0.0, 0.0]}))
    assert res.defined
    assert res.excluded_tasks == [1]
    assert res.value == pytest.approx(1.0)  # only task 0 contributes


def test_similarity_bounded():
    gen = np.random.default_rng(0)
    for _ in range(20):
        vecs = {i: gen.normal(size=5) for i in range(4)}
        res = gradient_similarity(report_from(vecs))
        if res.defined:
            assert -1.0 - 1e-12 <= res.value <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# agreement vectors


def test_agreement_hand_case():
    rep = report_from({0: [2.0, 0.0], 1: [0.0, 2.0]})
    vecs = agreement_vectors(rep)
    assert vecs[0].values.tolist() == [2.0, 0.0]
    assert vecs[1].values.tolist() == [0.0, 2.0]


def test_agreement_single_task_nonnegative():
    rep = report_from({0: [1.5, -2.0, 0.0]})
    (a,) = agreement_vectors(rep)
    assert np.all(a.values >= 0.0)
    assert a.values.tolist() == [1.5 ** 2, 4.0, 0.0]


def test_agreement_opposite_gradients_zero():
    rep = report_from({0: [1.0, -2.0], 1: [-1.0, 2.0]})
    for v in agreement_vectors(rep):
        assert np.all(v.values == 0.0)


def test_agreement_sign_law():
    gen = np.random.default_rng(1)
    vecs = {i: gen.normal(size=8) for i in range(5)}
    rep = report_from(vecs)
    for av in agreement_vectors(rep):
        g = rep.per_task[av.task_id]
        m = rep.mean_gradient
        pos = (av.values > 0)
        assert np.array_equal(pos, (np.sign(g) == np.sign(m)) & (g != 0) & (m != 0))


def test_agreement_normalization_flag():
    rep = report_from({0: [3.0, 0.0], 1: [0.0, 4.0]})
    raw = agreement_vectors(rep)
    unit = agreement_vectors(rep, normalize=True)
    assert np.linalg.norm(raw[1].values) != pytest.approx(1.0)
    for v in unit:
        assert np.linalg.norm(v.values) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# per-task gradient sweeps on a real model


def _two_task_store(T=16, n_traj=4):
    store = DatasetStore()
    t0 = TaskSpec(0, "point_dir", (0.0,), episode_len=T)
    t1 = TaskSpec(1, "point_dir", (np.pi,), episode_len=T)
    store.add_task(t0, generate_dataset(t0, n_traj, seed=0))
    store.add_task(t1, generate_dataset(t1, n_traj, seed=0))
    return store


def test_per_task_gradients_shapes_and_readonly():
    store = _two_task_store()
    cfg = tiny_cfg()
    model = PromptDT(cfg)
    params = model.init_params(seed=0)
    before = params.flatten().copy()
    flags = {n: params.is_trainable(n) for n in params.names()}
    rep = per_task_gradients(model, params, store, [0, 1], batches_per_task=2,
                             scope="all_backbone", seed=3, batch_size=4)
    assert rep.task_ids() == [0, 1]
    width = sum(params[n].data.size for n in params.scope_names("all_backbone"))
    assert rep.per_task[0].shape == (width,)
    assert rep.per_task[0].dtype == np.float64
    assert np.allclose(rep.mean_gradient, (rep.per_task[0] + rep.per_task[1]) / 2)
    assert np.array_equal(params.flatten(), before)  # parameters untouched
    assert {n: params.is_trainable(n) for n in params.names()} == flags


def test_per_task_gradients_identical_datasets_bitequal():
    store = DatasetStore()
    t0 = TaskSpec(0, "point_vel", (2.0,), episode_len=16)
    trajs = generate_dataset(t0, 4, seed=5)
    store.add_task(t0, trajs)
    clones = [Trajectory(t.states, t.actions, t.rewards, t.rtg, t.timesteps, 7)
              for t in trajs]
    store.add_task(TaskSpec(7, "point_vel", (2.0,), episode_len=16), clones)
    cfg = tiny_cfg()
    model = PromptDT(cfg)
    params = model.init_params(seed=0)
    rep = per_task_gradients(model, params, store, [0, 7], batches_per_task=2,
                             seed=11, batch_size=4)
    assert np.array_equal(rep.per_task[0], rep.per_task[7])


def test_per_task_gradients_loss_zero_point():
    # zero the action head and use zero-action data: exact-zero residuals
    # propagate exact-zero gradients everywhere
    store = DatasetStore()
    task = TaskSpec(0, "point_vel", (2.0,), episode_len=16)
    trajs = generate_dataset(task, 2, seed=0)
    zeroed = [Trajectory(t.states, np.zeros_like(t.actions), t.rewards, t.rtg,
                         t.timesteps, 0) for t in trajs]
    store.add_task(task, zeroed)
    cfg = tiny_cfg()
    model = PromptDT(cfg)
    params = model.init_params(seed=0)
    params["head.w"].data[:] = 0.0
    params["head.b"].data[:] = 0.0
    rep = per_task_gradients(model, params, store, [0], batches_per_task=1,
                             seed=0, batch_size=4)
    assert np.all(rep.per_task[0] == 0.0)
    res = gradient_similarity(rep)
    assert not res.defined and res.excluded_tasks == [0]


def test_per_task_gradients_frozen_scope_restored():
    store = _two_task_store()
    cfg = tiny_cfg()
    model = PromptDT(cfg)
    params = model.init_params(seed=0)
    params.set_frozen_components(["backbone"])  # everything frozen
    rep = per_task_gradients(model, params, store, [0], batches_per_task=1,
                             scope="all_backbone", seed=0, batch_size=2)
    assert np.any(rep.per_task[0] != 0.0)  # measured despite the freeze
    assert all(not params.is_trainable(n) for n in params.names())
    assert all(not params[n].requires_grad for n in params.names())


def test_per_task_gradients_errors():
    store = _two_task_store()
    cfg = tiny_cfg()
    model = PromptDT(cfg)
    params = model.init_params(seed=0)
    with pytest.raises(DatasetError):
        per_task_gradients(model, params, store, [], seed=0)
    store.add_task(TaskSpec(2, "point_vel", (2.0,), episode_len=16), [])
    with pytest.raises(DatasetError):
        per_task_gradients(model, params, store, [2], seed=0)


def test_gradient_report_json_roundtrip():
    rep = report_from({0: [1.0, 2.0], 3: [0.5, -1.5]})
    back = GradientReport.from_json(rep.to_json())
    assert back.task_ids() == [0, 3]
    assert np.array_equal(back.per_task[3], rep.per_task[3])
    assert np.array_equal(back.mean_gradient, rep.mean_gradient)
    assert back.scope == rep.scope


# ---------------------------------------------------------------------------
# random grouping


def test_random_grouping_sizes():
    g = random_grouping(range(16), 4, seed=0)
    assert sorted(len(g.tasks_in(i)) for i in range(4)) == [4, 4, 4, 4]
    g = random_grouping(range(10), 3, seed=0)
    assert sorted(len(g.tasks_in(i)) for i in range(3)) == [3, 3, 4]


def test_random_grouping_partition_and_determinism():
    g1 = random_grouping(range(10), 3, seed=4)
    g2 = random_grouping(range(10), 3, seed=4)
    assert g1.assignment == g2.assignment
    seen = [t for i in range(3) for t in g1.tasks_in(i)]
    assert sorted(seen) == list(range(10))
    diff = any(random_grouping(range(10), 3, seed=s).assignment != g1.assignment
               for s in range(1, 6))
    assert diff


def test_random_grouping_errors():
    with pytest.raises(GroupingError):
        random_grouping(range(3), 4, seed=0)
    with pytest.raises(GroupingError):
        random_grouping(range(3), 0, seed=0)


def test_group_assignment_validation_and_json():
    with pytest.raises(GroupingError):
        GroupAssignment({0: 0, 1: 2}, 2, "random")  # group 1 empty
    g = random_grouping(range(6), 2, seed=0)
    back = GroupAssignment.from_json(g.to_json())
    assert back.assignment == g.assignment
    assert back.group_of(3) == g[3]


# ---------------------------------------------------------------------------
# k-means


def _planted(gen, n_per=4, k=3, d=6, spread=0.02, sep=10.0):
    centers = gen.normal(size=(k, d)) * sep
    pts = np.concatenate([c + gen.normal(size=(n_per, d)) * spread for c in centers])
    labels = np.repeat(np.arange(k), n_per)
    return pts, labels


def test_kmeans_recovers_planted_clusters():
    gen = np.random.default_rng(2)
    pts, truth = _planted(gen)
    vecs = [AgreementVector(i, p) for i, p in enumerate(pts)]
    for seed in range(3):
        g = kmeans_grouping(vecs, 3, seed=seed)
        got = np.array([g[i] for i in range(len(pts))])
        assert adjusted_rand_index(got, truth) == pytest.approx(1.0)


def test_kmeans_k_equals_n_and_k_one():
    gen = np.random.default_rng(0)
    pts = gen.normal(size=(5, 3)) * 3.0
    vecs = [AgreementVector(i, p) for i, p in enumerate(pts)]
    singles = kmeans_grouping(vecs, 5, seed=0)
    assert sorted(len(singles.tasks_in(i)) for i in range(5)) == [1] * 5
    one = kmeans_grouping(vecs, 1, seed=0)
    assert one.tasks_in(0) == [0, 1, 2, 3, 4]
    with pytest.raises(GroupingError):
        kmeans_grouping(vecs, 6, seed=0)


def test_kmeans_objective_monotone():
    gen = np.random.default_rng(3)
    pts = gen.normal(size=(40, 4))
    _, _, history = lloyd_kmeans(pts, 5, seed=1)
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


def test_kmeans_nonfinite_rejected():
    pts = np.array([[1.0, np.nan], [0.0, 0.0]])
    with pytest.raises(GroupingError):
        lloyd_kmeans(pts, 1, seed=0)


def test_kmeans_matches_sklearn_on_separated_data():
    gen = np.random.default_rng(5)
    pts, _ = _planted(gen, n_per=6, k=4, d=5)
    ours, _, _ = lloyd_kmeans(pts, 4, seed=0)
    ref = KMeans(n_clusters=4, n_init=10, random_state=0).fit_predict(pts)
    assert adjusted_rand_score(ours, ref) == pytest.approx(1.0)


def test_ari_matches_sklearn():
    gen = np.random.default_rng(7)
    for _ in range(25):
        a = gen.integers(0, 4, size=30)
        b = gen.integers(0, 3, size=30)
        assert adjusted_rand_index(a, b) == pytest.approx(
            adjusted_rand_score(a, b), abs=1e-12)
    assert adjusted_rand_index([0, 0, 1, 1], [5, 5, 2, 2]) == 1.0
    assert adjusted_rand_index([0, 0, 0], [0, 0, 0]) == 1.0


# ---------------------------------------------------------------------------
# subset sampling


def _difficulties(pool, value=50.0):
    return {t.task_id: value for t in pool}


def test_family_quotas_default16():
    pool = make_suite("default16")
    q = family_quotas(pool, 8, {t.task_id: t.family for t in pool})
    assert q == {"point_dir": 3, "point_vel": 3, "point_reach": 2}
    q4 = family_quotas(pool, 4, {t.task_id: t.family for t in pool})
    assert sum(q4.values()) == 4 and q4["point_dir"] >= 1


def test_subset_sampler_full_pool_and_counts():
    pool = make_suite("default16")
    diff = _difficulties(pool)
    assert task_subset_sampler(pool, diff, 16, seed=0) == list(range(16))
    sub = task_subset_sampler(pool, diff, 8, seed=0)
    assert len(sub) == 8 and len(set(sub)) == 8
    fams = [pool[t].family for t in sub]
    assert fams.count("point_dir") == 3
    assert fams.count("point_vel") == 3
    assert fams.count("point_reach") == 2


def test_subset_sampler_seeds_differ():
    pool = make_suite("default16")
    diff = _difficulties(pool)
    base = task_subset_sampler(pool, diff, 8, seed=0)
    assert any(task_subset_sampler(pool, diff, 8, seed=s) != base
               for s in range(1, 11))
    assert task_subset_sampler(pool, diff, 8, seed=0) == base


def test_subset_sampler_difficulty_band():
    pool = [TaskSpec(i, "point_vel", (2.0,), episode_len=16) for i in range(4)]
    diff = {0: 0.0, 1: 0.0, 2: 0.0, 3: 100.0}
    with pytest.raises(GroupingError, match="difficulty-balance"):
        task_subset_sampler(pool, diff, 2, seed=0, max_draws=50)
    # widen the band and the same draw succeeds
    sub = task_subset_sampler(pool, diff, 2, seed=0, band=60.0)
    assert len(sub) == 2


def test_subset_sampler_errors():
    pool = make_suite("default16")
    with pytest.raises(GroupingError):
        task_subset_sampler(pool, _difficulties(pool), 17, seed=0)
    with pytest.raises(GroupingError, match="difficulty"):
        task_subset_sampler(pool, {0: 1.0}, 4, seed=0)
