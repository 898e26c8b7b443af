"""
有限差分梯度（独立于反向传播的校验基准）
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor


def finite_diff_grad(
    f: Callable[[Tensor], float], x: Tensor, epsilon: float = 1e-5
) -> np.ndarray:
    """
    中心差分估计 (f(x+εe_k) - f(x-εe_k)) / (2ε)

    Args:
        f: 以张量为输入、返回标量的纯函数
        x: 求导位置；每次扰动都构造新的张量，x 本身保持不变
        epsilon: 步长, 必须 > 0

    Returns:
        与 x 同形状的梯度估计
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    base = x.values
    flat = base.reshape(-1)
    grad = np.zeros(flat.size)
    for k in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[k] += epsilon
        minus[k] -= epsilon
        f_plus = float(f(Tensor(plus.reshape(base.shape), x.requires_grad, x.name)))
        f_minus = float(f(Tensor(minus.reshape(base.shape), x.requires_grad, x.name)))
        grad[k] = (f_plus - f_minus) / (2.0 * epsilon)
    return grad.reshape(base.shape)


@dataclass
class GradientComparison:
    max_relative_error: float
    max_absolute_error: float
    ok: bool


def compare_gradients(
    analytic: np.ndarray,
    numeric: np.ndarray,
    rtol: float = 1e-4,
    atol: float = 1e-6,
    small: float = 1e-3,
) -> GradientComparison:
    """
    对比解析梯度与数值梯度

    梯度绝对值不小于 small 的坐标使用相对误差 (< rtol)，其余坐标使用绝对误差 (< atol)。
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ValueError(f"shape mismatch {analytic.shape} vs {numeric.shape}")
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    large = scale >= small
    rel = float(np.max(diff[large] / scale[large])) if large.any() else 0.0
    abs_err = float(np.max(diff[~large])) if (~large).any() else 0.0
    return GradientComparison(rel, abs_err, rel < rtol and abs_err < atol)
