"""Mixture-of-experts extension: expert parameters, router, routing math.

Experts are shaped exactly like the backbone FFN and run beside it:
    block output = x + ffn(ln2(x)) + sum_i w_i * expert_i(ln2(x))
with w from a per-block router MLP applied to the same pre-FFN activations.
Function-preserving initialization copies the FFN's first linear layer into
each expert and zeroes the second, so a freshly augmented model computes
bit-for-bit the same outputs as the plain backbone.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import rng as _rng
from ..errors import RoutingError
from ..params import ParamSet, ROUTER, expert_component
from .config import FFN_MULT, ModelConfig, MoEConfig, RoutingMode

# sub-stream tags under the init purpose
_EXPERT_STREAM = 2
_ROUTER_STREAM = 3


def attach_experts(params: ParamSet, cfg: ModelConfig, moe: MoEConfig,
                   preserve: bool = True, seed: int | None = None,
                   dtype=None) -> None:
    """Add expert parameters for every block.

    preserve=True copies each block's FFN first layer and zeroes the second
    (function-preserving). preserve=False draws a fresh random init, which
    requires a seed.
    """
    if not preserve and seed is None:
        raise ValueError("random expert init requires a seed")
    h = cfg.hidden_dim
    f = FFN_MULT * h
    if dtype is None:
        dtype = params[f"block00.ffn.w1"].data.dtype
    gen = _rng.stream(_rng.INIT, seed, _EXPERT_STREAM) if not preserve else None
    for i in range(cfg.n_layers):
        blk = f"block{i:02d}"
        for j in range(moe.n_experts):
            comp = expert_component(j)
            prefix = f"{blk}.{comp}"
            if preserve:
                w1 = params[f"{blk}.ffn.w1"].data.copy()
                b1 = params[f"{blk}.ffn.b1"].data.copy()
                w2 = np.zeros((f, h), dtype=dtype)
                b2 = np.zeros(h, dtype=dtype)
            else:
                w1 = gen.normal(0.0, 0.02, size=(h, f)).astype(dtype)
                b1 = np.zeros(f, dtype=dtype)
                w2 = gen.normal(0.0, 0.02, size=(f, h)).astype(dtype)
                b2 = np.zeros(h, dtype=dtype)
            params.add(f"{prefix}.w1", ad.Tensor(w1, True), comp)
            params.add(f"{prefix}.b1", ad.Tensor(b1, True), comp)
            params.add(f"{prefix}.w2", ad.Tensor(w2, True), comp)
            params.add(f"{prefix}.b2", ad.Tensor(b2, True), comp)


def attach_router(params: ParamSet, cfg: ModelConfig, moe: MoEConfig,
                  seed: int, dtype=None) -> None:
    """Add the per-block router MLP: hidden -> ... -> n_experts logits.

    Hidden layers use He-scaled normals (std sqrt(2/fan_in)); a flat small
    std would shrink activations roughly tenfold per layer at these widths
    and leave the deep router with vanishing gradients. The logit layer uses
    std 0.02 so routing starts near uniform, which keeps early dense
    training insensitive to expert order.
    """
    h = cfg.hidden_dim
    rh = moe.hidden(cfg)
    if dtype is None:
        dtype = params[f"block00.ffn.w1"].data.dtype
    gen = _rng.stream(_rng.INIT, seed, _ROUTER_STREAM)
    dims = [h] + [rh] * (moe.router_layers - 1) + [moe.n_experts]
    for i in range(cfg.n_layers):
        for l in range(moe.router_layers):
            din, dout = dims[l], dims[l + 1]
            std = 0.02 if l == moe.router_layers - 1 else np.sqrt(2.0 / din)
            w = gen.normal(0.0, std, size=(din, dout)).astype(dtype)
            b = np.zeros(dout, dtype=dtype)
            params.add(f"block{i:02d}.router.l{l}.w", ad.Tensor(w, True), ROUTER)
            params.add(f"block{i:02d}.router.l{l}.b", ad.Tensor(b, True), ROUTER)


def has_experts(params: ParamSet) -> bool:
    return "block00.expert00.w1" in params


def has_router(params: ParamSet) -> bool:
    return "block00.router.l0.w" in params


def n_experts_in(params: ParamSet) -> int:
    return len([c for c in params.components() if c.startswith("expert")])


def expert_forward(params: ParamSet, block: int, j: int, x, act):
    prefix = f"block{block:02d}.expert{j:02d}"
    h1 = act(ad.add(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ad.add(ad.matmul(h1, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def router_forward(params: ParamSet, block: int, x, act, n_layers: int):
    h = x
    for l in range(n_layers):
        w = params[f"block{block:02d}.router.l{l}.w"]
        b = params[f"block{block:02d}.router.l{l}.b"]
        h = ad.add(ad.matmul(h, w), b)
        if l < n_layers - 1:
            h = act(h)
    return h  # [B, L, n_experts] logits


def routing_weights(logits, mode: RoutingMode, n_experts: int):
    """Expert mixing weights from router logits under dense/topk routing."""
    if mode.kind == "dense":
        return ad.softmax(logits)
    if mode.kind == "topk":
        if mode.param > n_experts:
            raise RoutingError(f"topk k={mode.param} exceeds n_experts={n_experts}")
        return ad.topk_softmax(logits, mode.param)
    raise RoutingError(f"routing_weights: unsupported mode {mode}")


def topk_route(logits: np.ndarray, k: int) -> np.ndarray:
    """Numpy-level top-k routing weights (convenience for diagnostics)."""
    t = ad.topk_softmax(ad.constant(np.asarray(logits, dtype=np.float64)), k)
    return t.data


def moe_branch(params: ParamSet, cfg: ModelConfig, moe: MoEConfig, block: int,
               f_in, mode: RoutingMode, act, oracle_experts: np.ndarray | None = None):
    """The expert mixture's contribution to one block's residual stream."""
    n = moe.n_experts
    if mode.kind == "hard":
        if mode.param >= n:
            raise RoutingError(f"hard expert index {mode.param} out of range ({n} experts)")
        return expert_forward(params, block, mode.param, f_in, act)
    outs = ad.stack([expert_forward(params, block, j, f_in, act) for j in range(n)], axis=2)
    B, L = f_in.data.shape[0], f_in.data.shape[1]
    if mode.kind == "oracle":
        if oracle_experts is None:
            raise RoutingError("oracle routing requires per-sample expert ids")
        ids = np.asarray(oracle_experts)
        if ids.shape != (B,) or ids.min() < 0 or ids.max() >= n:
            raise RoutingError("oracle expert ids out of range")
        onehot = np.zeros((B, 1, n, 1), dtype=f_in.data.dtype)
        onehot[np.arange(B), 0, ids, 0] = 1.0
        w4 = ad.constant(np.broadcast_to(onehot, (B, L, n, 1)).copy(), f_in.data.dtype)
    else:
        if not has_router(params):
            raise RoutingError(f"{mode.kind} routing requires a router")
        logits = router_forward(params, block, f_in, act, moe.router_layers)
        w = routing_weights(logits, mode, n)
        w4 = ad.reshape(w, (B, L, n, 1))
    return ad.sum_axis(ad.mul(outs, w4), 2)


def freeze(params: ParamSet, components, adam_state=None) -> None:
    """Make exactly `components` frozen, everything else trainable.

    Drops optimizer moments for newly frozen tensors and creates zero moments
    for newly thawed ones so a later adam_step finds consistent state.
    """
    params.set_frozen_components(components)
    if adam_state is not None:
        for name in params.names():
            if params.is_trainable(name):
                if name not in adam_state.m:
                    adam_state.m[name] = np.zeros_like(params[name].data)
                    adam_state.v[name] = np.zeros_like(params[name].data)
            else:
                adam_state.m.pop(name, None)
                adam_state.v.pop(name, None)
