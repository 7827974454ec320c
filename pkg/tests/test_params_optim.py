import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import moedt.autodiff as ad
from moedt.autodiff import tensor
from moedt.errors import (DuplicateNameError, FrozenParameterError,
                          MissingMomentError, MoedtError, UnknownComponentError)
from moedt.optim import adam_init, adam_step, drop_moments
from moedt.params import BACKBONE, ROUTER, ParamSet, expert_component


def small_params(dtype=np.float32) -> ParamSet:
    ps = ParamSet()
    gen = np.random.default_rng(3)
    ps.add("block00.ffn.w1", tensor(gen.normal(size=(4, 8)), True, dtype), BACKBONE)
    ps.add("block00.attn.wq", tensor(gen.normal(size=(4, 4)), True, dtype), BACKBONE)
    ps.add("expert00.w1", tensor(gen.normal(size=(4, 8)), True, dtype), expert_component(0))
    ps.add("expert01.w1", tensor(gen.normal(size=(4, 8)), True, dtype), expert_component(1))
    ps.add("router.l0", tensor(gen.normal(size=(4, 4)), True, dtype), ROUTER)
    return ps


def test_names_are_lexicographic():
    ps = small_params()
    assert ps.names() == sorted(ps.names())
    assert ps.names()[0] == "block00.attn.wq"


def test_duplicate_name_rejected():
    ps = small_params()
    with pytest.raises(DuplicateNameError):
        ps.add("router.l0", tensor(np.zeros(2)), ROUTER)


def test_flatten_unflatten_roundtrip():
    ps = small_params()
    vec = ps.flatten()
    back = ps.unflatten(vec)
    for name, t in ps.items():
        assert np.array_equal(back[name], t.data)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_flatten_roundtrip_bit_exact(seed):
    ps = ParamSet()
    gen = np.random.default_rng(seed)
    for i in range(4):
        shape = tuple(gen.integers(1, 5, size=gen.integers(1, 3)))
        ps.add(f"p{i}", tensor(gen.normal(size=shape), True, np.float32), BACKBONE)
    vec = ps.flatten()
    ps.assign(ps.unflatten(vec))
    assert np.array_equal(ps.flatten(), vec)


def test_unflatten_length_mismatch():
    ps = small_params()
    with pytest.raises(MoedtError):
        ps.unflatten(np.zeros(3))


def test_freeze_replace_semantics():
    ps = small_params()
    ps.set_frozen_components({BACKBONE, expert_component(0)})
    assert not ps.is_trainable("block00.ffn.w1")
    assert not ps.is_trainable("expert00.w1")
    assert ps.is_trainable("expert01.w1")
    assert ps.is_trainable("router.l0")
    # empty set thaws everything
    ps.set_frozen_components(set())
    assert all(ps.is_trainable(n) for n in ps.names())


def test_freeze_unknown_component():
    ps = small_params()
    with pytest.raises(UnknownComponentError):
        ps.set_frozen_components({"expert99"})


def test_scope_names():
    ps = small_params()
    assert ps.scope_names("all_backbone") == ["block00.attn.wq", "block00.ffn.w1"]
    assert ps.scope_names("ffn_only") == ["block00.ffn.w1"]
    assert ps.scope_names("expert01") == ["expert01.w1"]
    with pytest.raises(MoedtError):
        ps.scope_names("nonsense")


def test_component_bytes_tracks_changes():
    ps = small_params()
    before = ps.component_bytes(BACKBONE)
    assert before == ps.component_bytes(BACKBONE)
    ps["block00.ffn.w1"].data[0, 0] += 1.0
    assert before != ps.component_bytes(BACKBONE)


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_grad_keeps_params():
    ps = small_params()
    before = ps.flatten().copy()
    state = adam_init(ps, lr=0.1)
    grads = {n: np.zeros_like(ps[n].data) for n in ps.trainable_names()}
    adam_step(ps, grads, state)
    assert np.array_equal(ps.flatten(), before)
    assert state.step_count == 1


def test_adam_first_step_hand_value():
    # scalar parameter, g=2, lr=0.1: delta = -0.1 * 2 / (2 + 1e-8)
    ps = ParamSet()
    ps.add("w", tensor([1.0], True, np.float64), BACKBONE)
    state = adam_init(ps, lr=0.1)
    adam_step(ps, {"w": np.array([2.0])}, state)
    expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8)
    assert ps["w"].data[0] == pytest.approx(expected, abs=1e-12)


def test_adam_frozen_param_untouched_end_to_end():
    ps = small_params()
    ps.set_frozen_components({ROUTER})
    frozen_before = ps.component_bytes(ROUTER)
    state = adam_init(ps, lr=0.05)

    def loss_fn():
        total = None
        for name in ps.trainable_names():
            term = ad.sum_all(ad.mul(ps[name], ps[name]))
            total = term if total is None else ad.add(total, term)
        return total

    for _ in range(5):
        _, grads = ad.forward_backward(loss_fn, ps)
        adam_step(ps, grads, state)
    assert ps.component_bytes(ROUTER) == frozen_before
    assert state.step_count == 5


def test_adam_rejects_frozen_grad_key():
    ps = small_params()
    ps.set_frozen_components({ROUTER})
    state = adam_init(ps)
    with pytest.raises(FrozenParameterError):
        adam_step(ps, {"router.l0": np.zeros((4, 4), np.float32)}, state)


def test_adam_missing_moment_error():
    ps = small_params()
    state = adam_init(ps)
    drop_moments(state, ["router.l0"])
    with pytest.raises(MissingMomentError):
        adam_step(ps, {"router.l0": np.zeros((4, 4), np.float32)}, state)


def test_adam_moment_shapes_match():
    ps = small_params()
    state = adam_init(ps)
    for name in ps.trainable_names():
        assert state.m[name].shape == ps[name].data.shape
        assert state.v[name].shape == ps[name].data.shape


def test_adam_descends_quadratic():
    ps = ParamSet()
    ps.add("w", tensor([5.0, -3.0], True, np.float64), BACKBONE)
    state = adam_init(ps, lr=0.05)
    losses = []
    for _ in range(200):
        loss, grads = ad.forward_backward(
            lambda: ad.sum_all(ad.mul(ps["w"], ps["w"])), ps)
        losses.append(loss)
        adam_step(ps, grads, state)
    assert losses[-1] < losses[0] * 0.01
