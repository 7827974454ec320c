"""MoE extension tests: function-preserving init, routing algebra, freeze."""
import numpy as np
import pytest

import moedt.autodiff as ad
from moedt.errors import DuplicateNameError, RoutingError
from moedt.model import (FFN_MULT, ModelConfig, MoEConfig, PromptDT,
                         RoutingMode, attach_experts, attach_router, freeze,
                         has_experts, has_router, topk_route)
from moedt.model.moe import n_experts_in
from moedt.optim import adam_init, adam_step
from moedt.params import expert_component

from util import random_batch, tiny_cfg


def build(n_experts=3, preserve=True, seed=11, dtype=np.float32, **cfg_over):
    cfg = tiny_cfg(**cfg_over)
    moe = MoEConfig(n_experts=n_experts)
    model = PromptDT(cfg, moe)
    params = model.init_params(seed=seed, dtype=dtype)
    attach_experts(params, cfg, moe, preserve=preserve,
                   seed=None if preserve else seed + 1)
    attach_router(params, cfg, moe, seed=seed + 2)
    return cfg, moe, model, params


# ---------------------------------------------------------------------------
# function-preserving init


def test_function_preserving_bit_equal():
    cfg, moe, model, params = build(preserve=True)
    backbone = PromptDT(cfg)
    gen = np.random.default_rng(5)
    for _ in range(10):
        batch = random_batch(cfg, gen, B=2)
        plain = backbone.forward(params, batch, mode=RoutingMode.backbone()).data
        mixed = model.forward(params, batch, mode=RoutingMode.dense()).data
        assert np.array_equal(plain, mixed)


def test_preserve_copies_are_independent():
    cfg, moe, model, params = build(preserve=True)
    w_ffn = params["block00.ffn.w1"]
    w_exp = params["block00.expert00.w1"]
    assert np.array_equal(w_ffn.data, w_exp.data)
    w_exp.data[0, 0] += 1.0
    assert not np.array_equal(w_ffn.data, w_exp.data)


def test_expert_shapes_match_ffn():
    cfg, moe, model, params = build()
    h, f = cfg.hidden_dim, FFN_MULT * cfg.hidden_dim
    for j in range(moe.n_experts):
        assert params[f"block00.expert{j:02d}.w1"].data.shape == params["block00.ffn.w1"].data.shape
        assert params[f"block00.expert{j:02d}.w2"].data.shape == params["block00.ffn.w2"].data.shape
    assert params["block00.ffn.w1"].data.shape == (h, f)


def test_attach_twice_rejected():
    cfg, moe, model, params = build()
    with pytest.raises(DuplicateNameError):
        attach_experts(params, cfg, moe, preserve=True)


def test_random_init_needs_seed():
    cfg = tiny_cfg()
    moe = MoEConfig(n_experts=2)
    params = PromptDT(cfg, moe).init_params(seed=0)
    with pytest.raises(ValueError):
        attach_experts(params, cfg, moe, preserve=False)


def test_component_queries():
    cfg, moe, model, params = build(n_experts=3)
    assert has_experts(params) and has_router(params)
    assert n_experts_in(params) == 3
    assert expert_component(3) == "expert03"


# ---------------------------------------------------------------------------
# routing algebra


def test_dense_weights_sum_to_one():
    cfg, moe, model, params = build(preserve=False)
    from moedt.model.moe import router_forward, routing_weights
    gen = np.random.default_rng(0)
    x = ad.constant(gen.normal(size=(2, 6, cfg.hidden_dim)).astype(np.float32))
    logits = router_forward(params, 0, x, model.act, moe.router_layers)
    w = routing_weights(logits, RoutingMode.dense(), moe.n_experts).data
    assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(w >= 0)


def test_hard_matches_onehot_dense():
    cfg, moe, model, params = build(preserve=False)
    gen = np.random.default_rng(1)
    batch = random_batch(cfg, gen, B=3)
    for j in range(moe.n_experts):
        hard = model.forward(params, batch, mode=RoutingMode.hard(j)).data
        oracle = model.forward(params, batch, mode=RoutingMode.oracle(),
                               oracle_experts=np.full(3, j)).data
        assert np.abs(hard - oracle).max() < 1e-6


def test_topk_full_matches_dense_model():
    cfg, moe, model, params = build(preserve=False)
    batch = random_batch(cfg, np.random.default_rng(2), B=2)
    dense = model.forward(params, batch, mode=RoutingMode.dense()).data
    full = model.forward(params, batch, mode=RoutingMode.topk(moe.n_experts)).data
    assert np.abs(dense - full).max() < 1e-6


def test_topk_excluded_expert_gets_zero_grad():
    cfg, moe, model, params = build(n_experts=3, preserve=False)
    # rig each block's router output bias so expert 2 never wins top-2
    for i in range(cfg.n_layers):
        params[f"block{i:02d}.router.l4.b"].data[:] = np.array([0.0, 0.0, -50.0], np.float32)
    batch = random_batch(cfg, np.random.default_rng(3), B=2)
    _, grads = ad.forward_backward(
        lambda: model.loss(params, batch, mode=RoutingMode.topk(2)), params)
    excluded = [n for n in grads if ".expert02." in n]
    assert excluded, "expert 2 params should be touched by the graph"
    for n in excluded:
        assert np.all(grads[n] == 0.0), n
    some_selected = [n for n in grads if ".expert00." in n]
    assert any(np.any(grads[n] != 0.0) for n in some_selected)


def test_topk_route_numpy_helper():
    w = topk_route(np.array([1.0, 3.0, 2.0, -1.0]), 2)
    assert np.count_nonzero(w) == 2
    assert w[1] > w[2] > 0
    assert w.sum() == pytest.approx(1.0)


def test_topk_exceeding_experts_rejected():
    cfg, moe, model, params = build(n_experts=2)
    batch = random_batch(cfg, np.random.default_rng(4), B=1)
    with pytest.raises(RoutingError):
        model.forward(params, batch, mode=RoutingMode.topk(5))


def test_hard_index_out_of_range():
    cfg, moe, model, params = build(n_experts=2)
    batch = random_batch(cfg, np.random.default_rng(4), B=1)
    with pytest.raises(RoutingError):
        model.forward(params, batch, mode=RoutingMode.hard(2))


def test_oracle_requires_ids():
    cfg, moe, model, params = build(n_experts=2)
    batch = random_batch(cfg, np.random.default_rng(4), B=2)
    with pytest.raises(RoutingError):
        model.forward(params, batch, mode=RoutingMode.oracle())
    with pytest.raises(RoutingError):
        model.forward(params, batch, mode=RoutingMode.oracle(),
                      oracle_experts=np.array([0, 9]))


def test_routing_mode_parse_roundtrip():
    for text in ("dense", "topk:4", "hard:2", "oracle", "backbone"):
        assert str(RoutingMode.parse(text)) == text
    with pytest.raises(RoutingError):
        RoutingMode.parse("topk:x")
    with pytest.raises(RoutingError):
        RoutingMode.parse("banana")


def test_routing_without_router_params():
    cfg = tiny_cfg()
    moe = MoEConfig(n_experts=2)
    model = PromptDT(cfg, moe)
    params = model.init_params(seed=1)
    attach_experts(params, cfg, moe, preserve=True)
    batch = random_batch(cfg, np.random.default_rng(0), B=1)
    with pytest.raises(RoutingError):
        model.forward(params, batch, mode=RoutingMode.dense())
    # hard routing needs no router
    model.forward(params, batch, mode=RoutingMode.hard(0))


# ---------------------------------------------------------------------------
# gradient correctness through the mixture


@pytest.mark.parametrize("mode", [RoutingMode.dense(), RoutingMode.topk(1),
                                  RoutingMode.hard(1)])
def test_moe_grad_check(mode):
    # gelu keeps the check smooth: the deep router's small init parks relu
    # pre-activations at the kink, where central differences go bad
    cfg, moe, model, params = build(n_experts=2, preserve=False, dtype=np.float64,
                                    hidden_dim=8, n_heads=2, context_K=2,
                                    prompt_Kstar=1, max_episode_len=8,
                                    activation="gelu")
    if mode.kind == "topk":
        # separate the logits so the selected set cannot flip under probing
        for i in range(cfg.n_layers):
            params[f"block{i:02d}.router.l4.b"].data[:] = [0.6, -0.6]
    batch = random_batch(cfg, np.random.default_rng(7), B=1, dtype=np.float64)
    err = ad.grad_check(lambda: model.loss(params, batch, mode=mode), params, eps=1e-5)
    assert err < 1e-6


# ---------------------------------------------------------------------------
# freeze


def test_freeze_router_only_training():
    cfg, moe, model, params = build(n_experts=2, preserve=False)
    frozen = {"backbone"} | {expert_component(j) for j in range(2)}
    state = adam_init(params, lr=1e-3)
    freeze(params, frozen, state)
    bb_before = params.component_bytes("backbone")
    e0_before = params.component_bytes("expert00")
    r_before = params.component_bytes("router")
    gen = np.random.default_rng(9)
    for step in range(5):
        batch = random_batch(cfg, gen, B=4)
        _, grads = ad.forward_backward(
            lambda: model.loss(params, batch, mode=RoutingMode.dense()), params)
        assert all(params.component_of(n) == "router" for n in grads)
        adam_step(params, grads, state)
    assert params.component_bytes("backbone") == bb_before
    assert params.component_bytes("expert00") == e0_before
    assert params.component_bytes("router") != r_before


def test_freeze_drops_and_restores_moments():
    cfg, moe, model, params = build(n_experts=2)
    state = adam_init(params)
    freeze(params, {"router"}, state)
    assert not any(n.startswith("block00.router") for n in state.m)
    freeze(params, set(), state)
    assert any("router" in n for n in state.m)
