"""Backbone model tests: tokens, causality, loss, golden regression."""
import numpy as np
import pytest

import moedt.autodiff as ad
from moedt.errors import DatasetError, ShapeError
from moedt.model import (ModelConfig, PromptDT, SegmentBatch, dt_loss,
                         state_positions)
from moedt.params import ParamSet

from util import random_batch, tiny_cfg


@pytest.fixture(scope="module")
def setup():
    cfg = tiny_cfg()
    model = PromptDT(cfg)
    params = model.init_params(seed=11)
    gen = np.random.default_rng(42)
    batch = random_batch(cfg, gen, B=3)
    return cfg, model, params, batch


# ---------------------------------------------------------------------------
# dt_loss


def test_loss_zero_when_exact():
    pred = ad.constant(np.array([[[0.3, -0.2]]]), np.float64)
    assert dt_loss(pred, pred.data.copy(), np.ones((1, 1, 2))).item() == 0.0


def test_loss_hand_value():
    # K=1, 2 valid dims, pred [1,2] vs target [0,0] -> (1 + 4) / 2 = 2.5
    pred = ad.constant(np.array([[[1.0, 2.0]]]), np.float64)
    loss = dt_loss(pred, np.zeros((1, 1, 2)), np.ones((1, 1, 2)))
    assert loss.item() == pytest.approx(2.5)


def test_loss_masked_dim_ignored():
    pred = ad.constant(np.array([[[1.0, 2.0, 777.0]]]), np.float64)
    target = np.array([[[0.0, 0.0, -555.0]]])
    mask = np.array([[[1.0, 1.0, 0.0]]])
    loss = dt_loss(pred, target, mask)
    assert loss.item() == pytest.approx(2.5)


def test_loss_masked_grad_exactly_zero():
    raw = ad.tensor(np.array([[[1.0, 2.0, 3.0]]]), requires_grad=True, dtype=np.float64)
    mask = np.array([[[1.0, 0.0, 1.0]]])
    g = ad.backward(dt_loss(raw, np.zeros((1, 1, 3)), mask))[raw]
    assert g[0, 0, 1] == 0.0
    assert g[0, 0, 0] != 0.0


def test_loss_all_masked_rejected():
    pred = ad.constant(np.ones((1, 2, 2)), np.float64)
    with pytest.raises(DatasetError):
        dt_loss(pred, np.zeros((1, 2, 2)), np.zeros((1, 2, 2)))


# ---------------------------------------------------------------------------
# forward mechanics


def test_forward_shapes(setup):
    cfg, model, params, batch = setup
    pred = model.forward(params, batch)
    assert pred.data.shape == (3, cfg.total_steps, cfg.max_action_dim)
    assert np.all(np.abs(pred.data) <= 1.0)


def test_forward_deterministic(setup):
    cfg, model, params, batch = setup
    a = model.forward(params, batch).data
    b = model.forward(params, batch).data
    assert np.array_equal(a, b)


def test_dropout_train_vs_eval(setup):
    cfg, model, params, batch = setup
    ev = model.forward(params, batch).data
    tr1 = model.forward(params, batch, train=True, dropout_p=0.2, seed=5, step=9).data
    tr2 = model.forward(params, batch, train=True, dropout_p=0.2, seed=5, step=9).data
    tr3 = model.forward(params, batch, train=True, dropout_p=0.2, seed=5, step=10).data
    assert not np.array_equal(ev, tr1)
    assert np.array_equal(tr1, tr2)
    assert not np.array_equal(tr1, tr3)


def test_timestep_overflow_rejected(setup):
    cfg, model, params, batch = setup
    bad = SegmentBatch(**{**batch.__dict__})
    bad.timesteps = batch.timesteps + cfg.max_episode_len
    with pytest.raises(ShapeError):
        model.forward(params, bad)


def test_batch_shape_validation(setup):
    cfg, model, params, batch = setup
    bad = SegmentBatch(**{**batch.__dict__})
    bad.states = batch.states[:, :, :2]
    with pytest.raises(ShapeError):
        model.forward(params, bad)


# ---------------------------------------------------------------------------
# causality


def test_causality_analytic_exact_zero(setup):
    cfg, model, params, batch = setup
    t_probe = 2  # probe prediction at step index 2 of Kstar+K total steps
    pred, inputs = model.forward(params, batch, return_inputs=True)
    one = ad.narrow(ad.narrow(pred, 1, t_probe, 1), 0, 0, 1)
    grads = ad.backward(ad.sum_all(one))
    g_act = grads[inputs["actions"]]
    g_state = grads[inputs["states"]]
    g_rtg = grads[inputs["rtg"]]
    # the action at step t comes after the state token at t: zero influence
    assert np.all(g_act[0, t_probe:, :] == 0.0)
    # strictly later states and rtgs: zero influence
    assert np.all(g_state[0, t_probe + 1:, :] == 0.0)
    assert np.all(g_rtg[0, t_probe + 1:, :] == 0.0)
    # earlier tokens do influence it
    assert np.any(g_state[0, :t_probe + 1, :] != 0.0)


def test_causality_perturbation(setup):
    cfg, model, params, batch = setup
    t_probe = 3
    base = model.forward(params, batch).data
    bumped = SegmentBatch(**{**batch.__dict__})
    seg_t = t_probe - cfg.prompt_Kstar  # probe falls inside the segment
    bumped.actions = batch.actions.copy()
    bumped.actions[:, seg_t:, :] += 0.7
    bumped.states = batch.states.copy()
    bumped.states[:, seg_t + 1:, :] -= 0.3
    after = model.forward(params, bumped).data
    assert np.array_equal(base[:, :t_probe + 1, :], after[:, :t_probe + 1, :])
    assert not np.array_equal(base[:, t_probe + 1:, :], after[:, t_probe + 1:, :])


def test_prompt_influences_all_segment_predictions(setup):
    cfg, model, params, batch = setup
    pred, inputs = model.forward(params, batch, return_inputs=True)
    # gradient of the LAST prediction w.r.t. the first prompt state is nonzero
    last = ad.narrow(ad.narrow(pred, 1, cfg.total_steps - 1, 1), 0, 0, 1)
    grads = ad.backward(ad.sum_all(last))
    assert np.any(grads[inputs["states"]][0, 0, :] != 0.0)


# ---------------------------------------------------------------------------
# padding


def test_padded_steps_do_not_leak(setup):
    cfg, model, params, batch = setup
    padded = SegmentBatch(**{**batch.__dict__})
    padded.prompt_valid = batch.prompt_valid.copy()
    padded.prompt_valid[:, 0] = 0.0
    padded.prompt_rtg = batch.prompt_rtg.copy()
    padded.prompt_states = batch.prompt_states.copy()
    padded.prompt_actions = batch.prompt_actions.copy()
    base = model.forward(params, padded).data
    # garbage in the padded step must not change any other prediction
    padded.prompt_rtg[:, 0] = 123.0
    padded.prompt_states[:, 0, :] = -55.0
    padded.prompt_actions[:, 0, :] = 99.0
    after = model.forward(params, padded).data
    assert np.array_equal(base[:, 1:, :], after[:, 1:, :])


# ---------------------------------------------------------------------------
# gradient correctness at model scale


def test_model_grad_check_small():
    cfg = tiny_cfg(hidden_dim=8, n_heads=2, context_K=2, prompt_Kstar=1,
                   max_episode_len=8)
    model = PromptDT(cfg)
    params = model.init_params(seed=3, dtype=np.float64)
    gen = np.random.default_rng(8)
    batch = random_batch(cfg, gen, B=1, dtype=np.float64)

    err = ad.grad_check(lambda: model.loss(params, batch), params, eps=1e-5)
    assert err < 1e-6


# ---------------------------------------------------------------------------
# golden regression


def test_golden_output(setup):
    import pathlib
    path = pathlib.Path(__file__).parent / "data" / "golden_model.npz"
    assert path.exists(), "golden file missing; run tools/gen_goldens.py"
    blob = np.load(path)
    cfg = tiny_cfg()
    model = PromptDT(cfg)
    params = model.init_params(seed=int(blob["seed"]))
    batch = random_batch(cfg, np.random.default_rng(int(blob["batch_seed"])), B=2)
    pred = model.forward(params, batch).data
    assert np.abs(pred - blob["pred"]).max() < 1e-6


# ---------------------------------------------------------------------------
# prompt identification (statistical, trained)


def _constant_action_batch(cfg, gen, level, B):
    batch = random_batch(cfg, gen, B=B)
    batch.actions[:] = level
    batch.prompt_actions[:] = level
    # make states informative of nothing; prompt is the only task signal
    return batch


def test_trained_model_reads_the_prompt():
    cfg = tiny_cfg(context_K=4, prompt_Kstar=2)
    model = PromptDT(cfg)
    params = model.init_params(seed=0)
    from moedt.optim import adam_init, adam_step
    state = adam_init(params, lr=3e-3)
    gen = np.random.default_rng(1)
    for step in range(150):
        level = 0.5 if step % 2 == 0 else -0.5
        batch = _constant_action_batch(cfg, gen, level, B=8)
        _, grads = ad.forward_backward(lambda: model.loss(params, batch), params)
        adam_step(params, grads, state)
    # same segment, two different prompts
    probe = np.random.default_rng(2)
    diffs = []
    for _ in range(100):
        base = random_batch(cfg, probe, B=1)
        pos = SegmentBatch(**{**base.__dict__})
        pos.prompt_actions = np.full_like(base.prompt_actions, 0.5)
        neg = SegmentBatch(**{**base.__dict__})
        neg.prompt_actions = np.full_like(base.prompt_actions, -0.5)
        a = model.forward(params, pos).data
        b = model.forward(params, neg).data
        diffs.append(np.abs(a - b).mean())
    diffs = np.asarray(diffs)
    mean = diffs.mean()
    sem = diffs.std(ddof=1) / np.sqrt(len(diffs))
    assert mean - 3 * sem > 0.0
