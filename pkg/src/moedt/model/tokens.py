"""Token-sequence assembly for prompt-conditioned trajectory batches.

A model input is the interleaved sequence
    (rtg*, s*, a*) x Kstar  followed by  (rtg, s, a) x K,
three tokens per step. Step m occupies token positions 3m (return-to-go),
3m+1 (state), 3m+2 (action); action predictions read from state-token
positions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import MASK_VALUE
from ..errors import ShapeError
from .config import ModelConfig


@dataclass
class SegmentBatch:
    """Aligned prompt + segment arrays, already padded to model maxima.

    valid flags mark real steps (1.0) vs padding (0.0); action_mask marks
    real action dimensions per batch element.
    """

    prompt_rtg: np.ndarray       # [B, Kstar]
    prompt_states: np.ndarray    # [B, Kstar, s_max]
    prompt_actions: np.ndarray   # [B, Kstar, a_max]
    prompt_timesteps: np.ndarray # [B, Kstar] int
    prompt_valid: np.ndarray     # [B, Kstar]
    rtg: np.ndarray              # [B, K]
    states: np.ndarray           # [B, K, s_max]
    actions: np.ndarray          # [B, K, a_max]
    timesteps: np.ndarray        # [B, K] int
    valid: np.ndarray            # [B, K]
    action_mask: np.ndarray      # [B, a_max]
    task_ids: np.ndarray         # [B] int

    @property
    def batch_size(self) -> int:
        return self.rtg.shape[0]

    def check(self, cfg: ModelConfig) -> None:
        B = self.batch_size
        Ks, K = cfg.prompt_Kstar, cfg.context_K
        expect = {
            "prompt_rtg": (B, Ks), "prompt_states": (B, Ks, cfg.max_state_dim),
            "prompt_actions": (B, Ks, cfg.max_action_dim),
            "prompt_timesteps": (B, Ks), "prompt_valid": (B, Ks),
            "rtg": (B, K), "states": (B, K, cfg.max_state_dim),
            "actions": (B, K, cfg.max_action_dim), "timesteps": (B, K),
            "valid": (B, K), "action_mask": (B, cfg.max_action_dim),
            "task_ids": (B,),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeError(f"SegmentBatch.{name}", arr.shape, shape)


def concat_steps(batch: SegmentBatch):
    """Prompt and segment arrays joined along the step axis."""
    rtg = np.concatenate([batch.prompt_rtg, batch.rtg], axis=1)
    states = np.concatenate([batch.prompt_states, batch.states], axis=1)
    actions = np.concatenate([batch.prompt_actions, batch.actions], axis=1)
    timesteps = np.concatenate([batch.prompt_timesteps, batch.timesteps], axis=1)
    valid = np.concatenate([batch.prompt_valid, batch.valid], axis=1)
    return rtg, states, actions, timesteps, valid


def state_positions(total_steps: int) -> np.ndarray:
    return np.arange(total_steps) * 3 + 1


def build_attention_mask(step_valid: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Additive attention mask [B, 1, L, L] from per-step validity [B, T].

    Allowed: keys at or before the query position whose step is real. The
    diagonal is always allowed so no row is fully masked (padded queries
    attend to themselves; their outputs are discarded by the loss mask).
    Disallowed entries get MASK_VALUE, which underflows to exactly zero
    attention weight.
    """
    B, T = step_valid.shape
    L = 3 * T
    token_valid = np.repeat(step_valid.astype(bool), 3, axis=1)  # [B, L]
    causal = np.tril(np.ones((L, L), dtype=bool))
    allowed = causal[None, :, :] & token_valid[:, None, :]
    allowed |= np.eye(L, dtype=bool)[None, :, :]
    ty = np.dtype(dtype).type
    mask = np.where(allowed, ty(0.0), ty(MASK_VALUE))
    return mask[:, None, :, :]
