"""
损失函数：KL 项、有序交叉熵、高斯重建项，以及按 minibatch 组合的总目标

所有单项函数返回形状 (B,) 的逐图像张量，由 total_loss 在批内取平均。
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, field_validator

from ..model.model import ModelParams, decode, encode, regress, sample_latent
from ..model.ordinal import NUM_BITS, OrdinalLabel, OrdinalPrediction, encode_labels
from ..tensor import Tensor, constant
from ..tensor import functional as F
from ..utils.exceptions import DataError, MixedBatchError, NumericalError, ShapeMismatchError

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12
UNLABELED = -1


class LossConfig(BaseModel):
    """损失权重与归一化设置"""

    recon_variance: float = 10.0
    kl_normalizer: Optional[float] = None
    recon_normalizer: Optional[float] = None
    labeled_batch: Optional[int] = None
    unlabeled_batch: Optional[int] = None

    @field_validator("recon_variance")
    @classmethod
    def _positive_variance(cls, v: float) -> float:
        if v <= 0:
            raise ValueError(f"recon_variance must be > 0, got {v}")
        return v

    @field_validator("kl_normalizer", "recon_normalizer")
    @classmethod
    def _normalizer_at_least_one(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v < 1:
            raise ValueError(f"normalizers must be >= 1, got {v}")
        return v

    @field_validator("labeled_batch", "unlabeled_batch")
    @classmethod
    def _positive_batch(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError(f"batch sizes must be >= 1, got {v}")
        return v

    def kl_norm(self, latent_dim: int) -> float:
        """未设置时为潜变量维度 D"""
        return float(self.kl_normalizer or latent_dim)

    def recon_norm(self, pixel_count: int) -> float:
        """未设置时为图像像素数 n²"""
        return float(self.recon_normalizer or pixel_count)


@dataclass
class Minibatch:
    """
    一个 minibatch：全部有标签或全部无标签

    Attributes:
        images: (B, 1, n, n) 像素数组
        severities: (B,) 整数类别，无标签批次为 None
        image_ids: 图像 id（日志与调试用）
    """

    images: np.ndarray
    severities: Optional[np.ndarray] = None
    image_ids: Sequence[str] = ()

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim == 3:
            self.images = self.images[:, None]
        if self.images.ndim != 4 or self.images.shape[0] == 0:
            raise DataError(
                f"minibatch images must be a nonempty (B,1,n,n) array, got {self.images.shape}",
                "EMPTY_BATCH",
            )
        if self.severities is not None:
            self.severities = np.asarray(self.severities, dtype=np.int64)
            if self.severities.shape != (self.images.shape[0],):
                raise ShapeMismatchError(
                    "Minibatch", "one severity per image", [self.severities.shape, self.images.shape]
                )
            if np.any(self.severities == UNLABELED):
                raise MixedBatchError()

    @property
    def labeled(self) -> bool:
        return self.severities is not None

    @property
    def size(self) -> int:
        return self.images.shape[0]

    @classmethod
    def from_records(cls, records: Sequence[Any], pixels: Optional[Sequence[np.ndarray]] = None) -> "Minibatch":
        """
        由 ImageRecord 列表构建 minibatch

        Args:
            records: 具有 image_id / pixels / severity 属性的记录
            pixels: 可选的替换像素（例如增强后的图像），与 records 一一对应

        Returns:
            Minibatch；有标签与无标签混合时抛出 MixedBatchError
        """
        if not records:
            raise DataError("cannot build an empty minibatch", "EMPTY_BATCH")
        flags = {r.severity is not None for r in records}
        if len(flags) > 1:
            raise MixedBatchError()
        source = pixels if pixels is not None else [r.pixels for r in records]
        images = np.stack([np.asarray(p) for p in source])
        severities = np.array([r.severity for r in records]) if flags == {True} else None
        return cls(images, severities, [r.image_id for r in records])


@dataclass
class LossBreakdown:
    """批内平均后的各损失项"""

    kl: float
    reconstruction: float
    total: float
    regression: Optional[float] = None
    entropy: Optional[float] = None
    entropy_weight: float = 0.0
    batch_size: int = 0
    objective: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def terms(self) -> Dict[str, float]:
        out = {"kl": self.kl, "reconstruction": self.reconstruction}
        if self.regression is not None:
            out["regression"] = self.regression
        if self.entropy is not None:
            out["entropy"] = self.entropy
        out["total"] = self.total
        return out

    def first_non_finite(self) -> Optional[str]:
        """返回第一个非有限的损失项名称"""
        for name, value in self.terms().items():
            if not np.isfinite(value):
                return name
        return None


# ---------------------------------------------------------------- 单项损失


def kl_loss(q, config: Optional[LossConfig] = None) -> Tensor:
    """
    KL(q(z|x) ‖ N(0, I)) = ½ Σ_k (μ_k² + λ_k² − log λ_k² − 1)，除以 kl_normalizer

    Args:
        q: GaussianLatent，mu/log_var 形状 (B, D)
        config: 损失设置（默认归一化为 D）

    Returns:
        (B,) 逐图像 KL
    """
    config = config or LossConfig()
    if not np.all(np.isfinite(q.log_var.values)):
        raise NumericalError("non-finite log-variance in KL term", "NON_FINITE_LATENT", term="kl")
    inner = F.add(F.add(F.square(q.mu), F.exp(q.log_var)), q.log_var, alpha=-1.0, scalar=-1.0)
    per_image = F.sum(inner, axis=-1)
    return F.scale(per_image, 0.5 / config.kl_norm(q.dim))


def _label_bits(labels, batch: int) -> np.ndarray:
    if isinstance(labels, OrdinalLabel):
        bits = labels.as_array()[None]
    elif isinstance(labels, (list, tuple)) and labels and isinstance(labels[0], OrdinalLabel):
        bits = np.stack([label.as_array() for label in labels])
    else:
        raw = np.asarray(labels)
        if raw.ndim == 1 and np.issubdtype(raw.dtype, np.integer):
            bits = encode_labels(raw)
        else:
            bits = np.atleast_2d(raw.astype(np.float64))
    if bits.shape != (batch, NUM_BITS):
        raise ShapeMismatchError("regression_loss", "labels do not match predictions", [bits.shape])
    return bits


def regression_loss(pred: OrdinalPrediction, labels) -> Tensor:
    """
    三个伯努利交叉熵之和 −Σ_j [y_j log ŷ_j + (1−y_j) log(1−ŷ_j)]

    Args:
        pred: (B, 3) 概率
        labels: OrdinalLabel / OrdinalLabel 列表 / (B, 3) 比特 / (B,) 类别

    Returns:
        (B,) 逐图像交叉熵；概率在取对数前截断到 1e-12
    """
    p = pred.probs
    y = _label_bits(labels, p.shape[0])
    log_p = F.log(p, floor=PROB_EPS)
    log_not_p = F.log(F.add(F.scale(p, -1.0), scalar=1.0), floor=PROB_EPS)
    ll = F.add(F.mul(log_p, constant(y)), F.mul(log_not_p, constant(1.0 - y)))
    return F.scale(F.sum(ll, axis=-1), -1.0)


def reconstruction_loss(x: Tensor, x_hat: Tensor, config: Optional[LossConfig] = None) -> Tensor:
    """
    ½ Σ_pixels (x − x̂)² / recon_variance，再除以 recon_normalizer

    Args:
        x: 原图，首维为批次
        x_hat: 解码器输出，与 x 同形状
        config: 损失设置（默认方差 10，归一化为像素数）

    Returns:
        (B,) 逐图像重建损失
    """
    config = config or LossConfig()
    if x.shape != x_hat.shape:
        raise ShapeMismatchError("reconstruction_loss", "x and x_hat differ", [x.shape, x_hat.shape])
    pixels = x.size // x.shape[0]
    axes = tuple(range(1, len(x.shape)))
    sq = F.square(F.sub(x, x_hat))
    per_image = F.sum(sq, axis=axes) if axes else sq
    return F.scale(per_image, 0.5 / config.recon_variance / config.recon_norm(pixels))


def entropy_penalty(pred: OrdinalPrediction) -> Tensor:
    """逐比特伯努利熵之和 −Σ_j [ŷ_j log ŷ_j + (1−ŷ_j) log(1−ŷ_j)]，形状 (B,)"""
    p = pred.probs
    not_p = F.add(F.scale(p, -1.0), scalar=1.0)
    h = F.add(F.mul(p, F.log(p, floor=PROB_EPS)), F.mul(not_p, F.log(not_p, floor=PROB_EPS)))
    return F.scale(F.sum(h, axis=-1), -1.0)


# ---------------------------------------------------------------- 总目标


def _draw_noise(noise: Union[np.ndarray, np.random.Generator], shape) -> np.ndarray:
    if isinstance(noise, np.random.Generator):
        return noise.standard_normal(shape)
    return np.asarray(noise, dtype=np.float64)


def _batch_mean(t: Tensor) -> float:
    return float(np.mean(t.values))


def total_loss(
    batch: Minibatch,
    params: ModelParams,
    config: Optional[LossConfig] = None,
    noise: Union[np.ndarray, np.random.Generator, None] = None,
    entropy_weight: float = 0.0,
) -> LossBreakdown:
    """
    一个 minibatch 的负下界（批内平均）

    有标签批次: J_KL + J_R + J_D；无标签批次: J_KL + J_D
    （entropy_weight > 0 时再加上 entropy_weight × 熵惩罚）。
    每张图像只采样一次 z。在活动计算图中调用时，breakdown.objective 可直接用于 backward。

    Args:
        batch: 有标签或无标签 minibatch
        params: 模型参数
        config: 损失设置
        noise: (B, D) 标准正态噪声或随机数生成器
        entropy_weight: 熵惩罚权重（仅作用于无标签批次）

    Returns:
        LossBreakdown
    """
    config = config or LossConfig()
    if entropy_weight < 0:
        raise ValueError(f"entropy_weight must be >= 0, got {entropy_weight}")
    if noise is None:
        raise ValueError("total_loss needs a noise array or a random generator")

    x = constant(batch.images)
    q = encode(x, params)
    eps = _draw_noise(noise, q.mu.shape)
    z = sample_latent(q, eps)
    x_hat = decode(z, params)

    kl = kl_loss(q, config)
    recon = reconstruction_loss(x, x_hat, config)
    per_image = F.add(kl, recon)

    regression = entropy = None
    if batch.labeled:
        reg = regression_loss(regress(z, params), batch.severities)
        per_image = F.add(per_image, reg)
        regression = _batch_mean(reg)
    elif entropy_weight > 0:
        ent = entropy_penalty(regress(z, params))
        per_image = F.add(per_image, ent, alpha=entropy_weight)
        entropy = _batch_mean(ent)

    objective = F.mean(per_image)
    return LossBreakdown(
        kl=_batch_mean(kl),
        reconstruction=_batch_mean(recon),
        total=objective.item(),
        regression=regression,
        entropy=entropy,
        entropy_weight=entropy_weight if entropy is not None else 0.0,
        batch_size=batch.size,
        objective=objective,
    )
