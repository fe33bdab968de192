"""AdamW with decoupled weight decay.

Bias-corrected first/second moments, and weight decay applied directly to the
pre-update parameter value rather than folded into the gradient:

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    """Per-parameter first/second moments plus the shared step counter."""

    config: AdamWConfig
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, params: dict, config: AdamWConfig | None = None) -> "AdamWState":
        config = config or AdamWConfig()
        state = cls(config=config)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adamw_step(params: dict, state: AdamWState) -> None:
    """Apply one update in place to every tensor in ``params``.

    Every parameter must carry a gradient (run backward first); a missing one
    raises ContractError naming the parameter.  Parameters whose gradient is
    identically zero still decay.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient; run backward first")
        if name not in state.m:
            raise ContractError(f"parameter {name!r} unknown to this optimizer state")

    cfg = state.config
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p.data)
