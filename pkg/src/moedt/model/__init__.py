from .config import FFN_MULT, ModelConfig, MoEConfig, RoutingMode
from .loss import dt_loss
from .moe import (attach_experts, attach_router, freeze, has_experts,
                  has_router, topk_route)
from .net import PromptDT
from .tokens import SegmentBatch, build_attention_mask, state_positions

__all__ = [
    "FFN_MULT", "ModelConfig", "MoEConfig", "RoutingMode", "dt_loss",
    "attach_experts", "attach_router", "freeze", "has_experts", "has_router",
    "topk_route", "PromptDT", "SegmentBatch", "build_attention_mask",
    "state_positions",
]
