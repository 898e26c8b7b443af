"""
有序回归：3比特标签编码与期望严重程度
"""

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from ..tensor import Tensor

NUM_CLASSES = 4
NUM_BITS = NUM_CLASSES - 1

SEVERITY_NAMES = {0: "none", 1: "mild", 2: "moderate", 3: "severe"}


@dataclass(frozen=True)
class OrdinalLabel:
    """严重程度 c 的 3 比特编码 [c>=1, c>=2, c>=3]"""

    bits: Tuple[int, int, int]

    def __post_init__(self):
        if len(self.bits) != NUM_BITS or any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"ordinal label needs {NUM_BITS} binary bits, got {self.bits}")
        if any(self.bits[j] < self.bits[j + 1] for j in range(NUM_BITS - 1)):
            raise ValueError(f"ordinal bits must be monotone non-increasing, got {self.bits}")

    @property
    def severity(self) -> int:
        return int(sum(self.bits))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.float64)


@dataclass
class OrdinalPrediction:
    """回归器输出 [ŷ1, ŷ2, ŷ3]（形状 (B, 3) 的 sigmoid 概率）"""

    probs: Tensor


def ordinal_encode(severity_class: int) -> OrdinalLabel:
    """
    把严重程度类别编码为有序比特

    Args:
        severity_class: 0(no) / 1(mild) / 2(moderate) / 3(severe)

    Returns:
        OrdinalLabel，bits[j] = 1 当且仅当 class >= j+1
    """
    if isinstance(severity_class, bool) or int(severity_class) != severity_class:
        raise ValueError(f"severity class must be an integer, got {severity_class!r}")
    c = int(severity_class)
    if not 0 <= c < NUM_CLASSES:
        raise ValueError(f"severity class must be in 0..{NUM_CLASSES - 1}, got {c}")
    return OrdinalLabel(tuple(int(c >= j + 1) for j in range(NUM_BITS)))


def encode_labels(severities: Sequence[int]) -> np.ndarray:
    """一批类别 -> (B, 3) 比特矩阵"""
    return np.stack([ordinal_encode(int(c)).as_array() for c in severities])


def expected_severity(
    pred: Union[OrdinalPrediction, np.ndarray, Sequence[float]],
) -> Union[float, np.ndarray]:
    """ŷ = ŷ1 + ŷ2 + ŷ3，单个预测返回 float，批量返回 (B,) 数组"""
    if isinstance(pred, OrdinalPrediction):
        probs = pred.probs.values
    else:
        probs = np.asarray(pred, dtype=np.float64)
    total = probs.sum(axis=-1)
    return float(total) if np.ndim(total) == 0 else total
