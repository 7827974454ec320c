"""Model and mixture configuration."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError, RoutingError

FFN_MULT = 4  # FFN (and expert) hidden width = FFN_MULT * hidden_dim


@dataclass(frozen=True)
class RoutingMode:
    """How expert outputs are combined.

    dense: softmax over all experts. topk: softmax restricted to the k
    largest router logits. hard: a single fixed expert with weight 1 (used
    during grouped expert training). oracle: per-sample hard selection of the
    task's owning expert. backbone: skip the MoE branch entirely.
    """

    kind: str
    param: int | None = None

    def __post_init__(self):
        if self.kind not in ("dense", "topk", "hard", "oracle", "backbone"):
            raise RoutingError(f"unknown routing kind {self.kind!r}")
        if self.kind == "topk" and (self.param is None or self.param < 1):
            raise RoutingError("topk routing needs k >= 1")
        if self.kind == "hard" and (self.param is None or self.param < 0):
            raise RoutingError("hard routing needs an expert index")

    @classmethod
    def dense(cls):
        return cls("dense")

    @classmethod
    def topk(cls, k: int):
        return cls("topk", k)

    @classmethod
    def hard(cls, j: int):
        return cls("hard", j)

    @classmethod
    def oracle(cls):
        return cls("oracle")

    @classmethod
    def backbone(cls):
        return cls("backbone")

    @classmethod
    def parse(cls, text: str) -> "RoutingMode":
        if ":" in text:
            kind, _, arg = text.partition(":")
            try:
                return cls(kind, int(arg))
            except ValueError:
                raise RoutingError(f"bad routing spec {text!r}")
        return cls(text)

    def __str__(self):
        return self.kind if self.param is None else f"{self.kind}:{self.param}"


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 3
    n_heads: int = 4
    hidden_dim: int = 64
    context_K: int = 20
    prompt_Kstar: int = 5
    max_state_dim: int = 4
    max_action_dim: int = 2
    dropout: float = 0.1
    max_episode_len: int = 64
    activation: str = "relu"

    def __post_init__(self):
        if self.hidden_dim % self.n_heads != 0:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")
        if self.context_K < 1 or self.prompt_Kstar < 0:
            raise ConfigError("context_K must be >= 1 and prompt_Kstar >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.activation not in ("relu", "gelu"):
            raise ConfigError(f"activation must be relu or gelu, got {self.activation!r}")
        if self.max_episode_len < 1:
            raise ConfigError("max_episode_len must be positive")

    @property
    def total_steps(self) -> int:
        return self.prompt_Kstar + self.context_K

    @property
    def seq_len(self) -> int:
        return 3 * self.total_steps


@dataclass(frozen=True)
class MoEConfig:
    n_experts: int
    router_layers: int = 5
    router_hidden: int | None = None  # None -> hidden_dim
    routing: RoutingMode = field(default_factory=RoutingMode.dense)

    def __post_init__(self):
        if self.n_experts < 1:
            raise ConfigError("n_experts must be >= 1")
        if self.router_layers < 1:
            raise ConfigError("router_layers must be >= 1")

    def hidden(self, model: ModelConfig) -> int:
        return self.router_hidden if self.router_hidden is not None else model.hidden_dim
