"""Prompt-conditioned decision transformer.

Input is the 3*(Kstar+K) token sequence of a trajectory prompt followed by a
recent-context segment; output is an action prediction at every state token.
Modality-specific linear projections plus a learned absolute-timestep
embedding produce tokens; a causal pre-LN transformer processes them; a tanh
head maps state-token activations to actions in [-1, 1].
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import rng as _rng
from ..errors import ShapeError
from ..params import BACKBONE, ParamSet
from . import moe as moe_mod
from .config import FFN_MULT, ModelConfig, MoEConfig, RoutingMode
from .loss import dt_loss
from .tokens import (SegmentBatch, build_attention_mask, concat_steps,
                     state_positions)

_SITE_EMBED = 0
_SITES_PER_BLOCK = 4


class PromptDT:
    def __init__(self, cfg: ModelConfig, moe: MoEConfig | None = None):
        self.cfg = cfg
        self.moe = moe
        self.act = ad.relu if cfg.activation == "relu" else ad.gelu

    # -- parameters ---------------------------------------------------------

    def init_params(self, seed: int, dtype=np.float32) -> ParamSet:
        """Backbone parameters only; experts/router attach separately."""
        cfg = self.cfg
        h = cfg.hidden_dim
        f = FFN_MULT * h
        gen = _rng.stream(_rng.INIT, seed)
        params = ParamSet()

        def w(name, shape):
            params.add(name, ad.Tensor(gen.normal(0.0, 0.02, size=shape).astype(dtype), True), BACKBONE)

        def zeros(name, shape):
            params.add(name, ad.Tensor(np.zeros(shape, dtype=dtype), True), BACKBONE)

        def ones(name, shape):
            params.add(name, ad.Tensor(np.ones(shape, dtype=dtype), True), BACKBONE)

        w("embed.rtg.w", (1, h)); zeros("embed.rtg.b", (h,))
        w("embed.state.w", (cfg.max_state_dim, h)); zeros("embed.state.b", (h,))
        w("embed.action.w", (cfg.max_action_dim, h)); zeros("embed.action.b", (h,))
        w("embed.time", (cfg.max_episode_len, h))
        for i in range(cfg.n_layers):
            blk = f"block{i:02d}"
            ones(f"{blk}.ln1.g", (h,)); zeros(f"{blk}.ln1.b", (h,))
            w(f"{blk}.attn.wqkv", (h, 3 * h)); zeros(f"{blk}.attn.bqkv", (3 * h,))
            w(f"{blk}.attn.wo", (h, h)); zeros(f"{blk}.attn.bo", (h,))
            ones(f"{blk}.ln2.g", (h,)); zeros(f"{blk}.ln2.b", (h,))
            w(f"{blk}.ffn.w1", (h, f)); zeros(f"{blk}.ffn.b1", (f,))
            w(f"{blk}.ffn.w2", (f, h)); zeros(f"{blk}.ffn.b2", (h,))
        ones("final_ln.g", (h,)); zeros("final_ln.b", (h,))
        w("head.w", (h, cfg.max_action_dim)); zeros("head.b", (cfg.max_action_dim,))
        return params

    # -- forward ------------------------------------------------------------

    def forward(self, params: ParamSet, batch: SegmentBatch,
                mode: RoutingMode | None = None, train: bool = False,
                dropout_p: float | None = None, seed: int = 0, step: int = 0,
                oracle_experts: np.ndarray | None = None,
                return_inputs: bool = False):
        """Action predictions [B, Kstar+K, max_action_dim] at state tokens.

        mode defaults to the MoE config's routing when experts are present,
        otherwise the plain backbone. return_inputs additionally returns the
        (rtg, states, actions) input leaves for gradient inspection.
        """
        cfg = self.cfg
        batch.check(cfg)
        if mode is None:
            mode = self.moe.routing if self.moe is not None and moe_mod.has_experts(params) \
                else RoutingMode.backbone()
        use_moe = mode.kind != "backbone"
        if use_moe and self.moe is None:
            raise ShapeError("forward", "MoE routing requested without MoEConfig")
        p = dropout_p if dropout_p is not None else cfg.dropout
        dtype = params["head.w"].data.dtype

        rtg, states, actions, timesteps, valid = concat_steps(batch)
        if timesteps.max() >= cfg.max_episode_len:
            raise ShapeError("forward", f"timestep {timesteps.max()} >= max_episode_len {cfg.max_episode_len}")
        B, T = rtg.shape
        L = 3 * T
        h = cfg.hidden_dim

        rtg_in = ad.Tensor(np.ascontiguousarray(rtg[:, :, None], dtype=dtype), return_inputs)
        st_in = ad.Tensor(np.ascontiguousarray(states, dtype=dtype), return_inputs)
        ac_in = ad.Tensor(np.ascontiguousarray(actions, dtype=dtype), return_inputs)

        time_emb = ad.take(params["embed.time"], timesteps.astype(np.int64), axis=0)
        r_tok = ad.add(ad.add(ad.matmul(rtg_in, params["embed.rtg.w"]), params["embed.rtg.b"]), time_emb)
        s_tok = ad.add(ad.add(ad.matmul(st_in, params["embed.state.w"]), params["embed.state.b"]), time_emb)
        a_tok = ad.add(ad.add(ad.matmul(ac_in, params["embed.action.w"]), params["embed.action.b"]), time_emb)
        x = ad.reshape(ad.stack([r_tok, s_tok, a_tok], axis=2), (B, L, h))
        x = ad.dropout(x, p, (seed, step, _SITE_EMBED), train)

        mask = ad.constant(build_attention_mask(valid, dtype), dtype)
        for i in range(cfg.n_layers):
            x = self._block(params, i, x, mask, mode, train, p, seed, step, oracle_experts)
        x = ad.layer_norm(x, params["final_ln.g"], params["final_ln.b"])
        hs = ad.take(x, state_positions(T), axis=1)
        pred = ad.tanh_(ad.add(ad.matmul(hs, params["head.w"]), params["head.b"]))
        if return_inputs:
            return pred, {"rtg": rtg_in, "states": st_in, "actions": ac_in}
        return pred

    def _block(self, params, i, x, mask, mode, train, p, seed, step, oracle_experts):
        cfg = self.cfg
        blk = f"block{i:02d}"
        B, L, h = x.data.shape
        H = cfg.n_heads
        dh = h // H
        site = _SITE_EMBED + 1 + i * _SITES_PER_BLOCK

        a_in = ad.layer_norm(x, params[f"{blk}.ln1.g"], params[f"{blk}.ln1.b"])
        qkv = ad.add(ad.matmul(a_in, params[f"{blk}.attn.wqkv"]), params[f"{blk}.attn.bqkv"])
        q = ad.transpose(ad.reshape(ad.narrow(qkv, 2, 0, h), (B, L, H, dh)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(ad.narrow(qkv, 2, h, h), (B, L, H, dh)), (0, 2, 1, 3))
        v = ad.transpose(ad.reshape(ad.narrow(qkv, 2, 2 * h, h), (B, L, H, dh)), (0, 2, 1, 3))
        scores = ad.add(ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh)), mask)
        probs = ad.dropout(ad.softmax(scores), p, (seed, step, site), train)
        ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (B, L, h))
        proj = ad.add(ad.matmul(ctx, params[f"{blk}.attn.wo"]), params[f"{blk}.attn.bo"])
        proj = ad.dropout(proj, p, (seed, step, site + 1), train)
        x = ad.add(x, proj)

        f_in = ad.layer_norm(x, params[f"{blk}.ln2.g"], params[f"{blk}.ln2.b"])
        h1 = self.act(ad.add(ad.matmul(f_in, params[f"{blk}.ffn.w1"]), params[f"{blk}.ffn.b1"]))
        ffn = ad.add(ad.matmul(h1, params[f"{blk}.ffn.w2"]), params[f"{blk}.ffn.b2"])
        ffn = ad.dropout(ffn, p, (seed, step, site + 2), train)
        out = ad.add(x, ffn)
        if mode.kind != "backbone":
            branch = moe_mod.moe_branch(params, cfg, self.moe, i, f_in, mode,
                                        self.act, oracle_experts)
            branch = ad.dropout(branch, p, (seed, step, site + 3), train)
            out = ad.add(out, branch)
        return out

    # -- loss / eval --------------------------------------------------------

    def loss(self, params: ParamSet, batch: SegmentBatch,
             mode: RoutingMode | None = None, train: bool = False,
             dropout_p: float | None = None, seed: int = 0, step: int = 0,
             oracle_experts: np.ndarray | None = None):
        pred = self.forward(params, batch, mode, train, dropout_p, seed, step, oracle_experts)
        seg = ad.narrow(pred, 1, self.cfg.prompt_Kstar, self.cfg.context_K)
        return dt_loss(seg, batch.actions, batch.valid[:, :, None] * batch.action_mask[:, None, :])

    def predict_last(self, params: ParamSet, batch: SegmentBatch,
                     mode: RoutingMode | None = None,
                     oracle_experts: np.ndarray | None = None) -> np.ndarray:
        """Eval-time action at the final segment position (no graph)."""
        with ad.no_grad():
            pred = self.forward(params, batch, mode, train=False,
                                oracle_experts=oracle_experts)
        return np.asarray(pred.data[:, -1, :])
