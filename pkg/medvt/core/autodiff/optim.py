"""Parameter update rules: SGD, decoupled-weight-decay Adam (AdamW) and the
polynomial learning-rate schedule.

Updates touch only trainable parameters that received a gradient; every other
entry keeps its array object, so frozen weights stay bit-identical.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from medvt.core.autodiff.params import ParamStore
from medvt.core.exceptions import ConfigError, DimensionError
from medvt.domain.models.common import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamWState:
    step: int = 0
    m: Dict[str, Tensor] = field(default_factory=dict)
    v: Dict[str, Tensor] = field(default_factory=dict)


def polynomial_lr(base_lr: float, step: int, total_steps: int, power: float = 0.9) -> float:
    """base_lr * (1 - step / total_steps) ** power, floored at zero."""
    if total_steps <= 0:
        return base_lr
    remaining = max(0.0, 1.0 - step / total_steps)
    return base_lr * remaining ** power


def lr_for(name: str, lr: float, lr_scales: Optional[Mapping[str, float]]) -> float:
    """Applies the first matching name-prefix multiplier."""
    for prefix, factor in (lr_scales or {}).items():
        if name.startswith(prefix):
            return lr * factor
    return lr


def _updatable(params: ParamStore, grads: Mapping[str, Tensor]):
    for name in params.trainable_names():
        g = grads.get(name)
        if g is None:
            continue
        value = params.value(name)
        if g.shape != value.shape:
            raise DimensionError(f"gradient for '{name}' does not match its parameter", value.shape, g.shape)
        yield name, value, g.astype(value.dtype, copy=False)


def sgd_step(params: ParamStore, grads: Mapping[str, Tensor], lr: float, weight_decay: float = 0.0,
             lr_scales: Optional[Mapping[str, float]] = None) -> ParamStore:
    """p <- p - lr * (g + weight_decay * p)."""
    updates = {}
    for name, p, g in _updatable(params, grads):
        step_lr = lr_for(name, lr, lr_scales)
        updates[name] = p - step_lr * (g + weight_decay * p)
    return params.with_values(updates)


def adamw_step(params: ParamStore, grads: Mapping[str, Tensor], state: AdamWState, lr: float,
               weight_decay: float = 1e-4, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               lr_scales: Optional[Mapping[str, float]] = None) -> Tuple[ParamStore, AdamWState]:
    """One AdamW update with bias correction and decoupled weight decay:

        m = b1 m + (1 - b1) g          v = b2 v + (1 - b2) g^2
        p = p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
    """
    b1, b2 = betas
    if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
        raise ConfigError(f"Adam betas must lie in [0, 1), got {betas}")
    t = state.step + 1
    m_all = dict(state.m)
    v_all = dict(state.v)
    updates = {}
    for name, p, g in _updatable(params, grads):
        m = b1 * m_all.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * v_all.get(name, np.zeros_like(p)) + (1.0 - b2) * g * g
        m_all[name], v_all[name] = m, v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        step_lr = lr_for(name, lr, lr_scales)
        updates[name] = (p - step_lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)).astype(p.dtype)
    return params.with_values(updates), AdamWState(step=t, m=m_all, v=v_all)
