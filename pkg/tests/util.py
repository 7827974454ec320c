"""Shared helpers for tests."""
import numpy as np

from moedt.model import ModelConfig, SegmentBatch


def tiny_cfg(**over) -> ModelConfig:
    base = dict(n_layers=1, n_heads=2, hidden_dim=16, context_K=4,
                prompt_Kstar=2, max_state_dim=4, max_action_dim=2,
                dropout=0.0, max_episode_len=16, activation="relu")
    base.update(over)
    return ModelConfig(**base)


def random_batch(cfg: ModelConfig, gen: np.random.Generator, B: int = 2,
                 dtype=np.float32) -> SegmentBatch:
    Ks, K = cfg.prompt_Kstar, cfg.context_K
    s, a = cfg.max_state_dim, cfg.max_action_dim

    def f(*shape):
        return gen.normal(size=shape).astype(dtype)

    seg_start = gen.integers(0, cfg.max_episode_len - K + 1, size=B)
    return SegmentBatch(
        prompt_rtg=f(B, Ks),
        prompt_states=f(B, Ks, s),
        prompt_actions=np.tanh(f(B, Ks, a)),
        prompt_timesteps=np.tile(np.arange(Ks), (B, 1)),
        prompt_valid=np.ones((B, Ks), dtype=dtype),
        rtg=f(B, K),
        states=f(B, K, s),
        actions=np.tanh(f(B, K, a)),
        timesteps=seg_start[:, None] + np.arange(K)[None, :],
        valid=np.ones((B, K), dtype=dtype),
        action_mask=np.ones((B, a), dtype=dtype),
        task_ids=np.zeros(B, dtype=np.int64),
    )
