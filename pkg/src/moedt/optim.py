"""Adam with bias correction.

Updates happen in place on the ParamSet's leaf arrays. Moments exist only for
trainable parameters; freezing a component should be followed by
drop_moments() so stale state cannot leak if the component is later thawed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FrozenParameterError, MissingMomentError
from .params import ParamSet


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: ParamSet, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name in params.trainable_names():
        arr = params[name].data
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_step(params: ParamSet, grads: dict, state: AdamState) -> None:
    """One Adam update. `grads` keys must be trainable parameters."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    # bias-corrected step size folded into a single scalar per step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in sorted(grads):
        if not params.is_trainable(name):
            raise FrozenParameterError(name)
        if name not in state.m:
            raise MissingMomentError(name)
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        params[name].data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


def drop_moments(state: AdamState, names) -> None:
    for name in names:
        state.m.pop(name, None)
        state.v.pop(name, None)
