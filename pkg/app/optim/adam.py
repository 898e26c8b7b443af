"""
Adam 优化器（带偏差校正）
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from ..model.model import ModelParams
from ..tensor import Tensor
from ..utils.exceptions import ShapeMismatchError, UsageError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """
    Adam 的一阶/二阶矩与步数

    Attributes:
        t: 优化器总步数
        steps: 每个参数实际被更新的次数（偏差校正使用）
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise UsageError(f"Adam lr and eps must be positive, got lr={self.lr}, eps={self.eps}", "lr")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise UsageError(
                f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}", "beta"
            )

    def copy(self) -> "AdamState":
        return AdamState(
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.t,
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            dict(self.steps),
        )


def _update(
    name: str, value: np.ndarray, grad: np.ndarray, state: AdamState
) -> np.ndarray:
    m = state.m.get(name)
    v = state.v.get(name)
    if m is None:
        m = np.zeros_like(value)
        v = np.zeros_like(value)
    k = state.steps.get(name, 0) + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * np.square(grad)
    m_hat = m / (1.0 - state.beta1**k)
    v_hat = v / (1.0 - state.beta2**k)
    state.m[name] = m
    state.v[name] = v
    state.steps[name] = k
    return value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def adam_step(
    params: ModelParams,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    names: Optional[Tuple[str, ...]] = None,
) -> Tuple[ModelParams, AdamState]:
    """
    对 grads 覆盖的参数做一次 Adam 更新

    Args:
        params: 当前参数（不会被修改）
        grads: 参数名 -> 梯度
        state: 优化器状态（原地更新）
        names: 本次应更新的参数名；给出时 grads 必须恰好覆盖这些参数

    Returns:
        (新参数, 状态)
    """
    if names is not None and set(grads) != set(names):
        extra = sorted(set(grads) - set(names))
        missing = sorted(set(names) - set(grads))
        raise UsageError(
            f"gradients must cover exactly the updated parameters (extra={extra}, missing={missing})",
            "grads",
        )
    updates: Dict[str, Tensor] = {}
    for name, grad in grads.items():
        try:
            current = params[name]
        except KeyError:
            raise UsageError(f"gradient for unknown parameter {name}", "grads") from None
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != current.shape:
            raise ShapeMismatchError(
                "adam_step", f"gradient shape for {name}", [grad.shape, current.shape]
            )
        updates[name] = Tensor(_update(name, current.values, grad, state), requires_grad=True, name=name)
    state.t += 1
    return params.replace(updates), state
