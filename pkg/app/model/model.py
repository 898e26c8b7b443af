"""
编码器 f_E、解码器 f_D、回归器 f_R 以及重参数化采样
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, model_validator

from ..tensor import Tensor, constant
from ..tensor import functional as F
from ..utils.exceptions import NumericalError, ShapeMismatchError
from .ordinal import NUM_BITS, OrdinalPrediction

logger = logging.getLogger(__name__)

GROUP_PREFIXES = {"E": "enc.", "D": "dec.", "R": "reg."}


class ArchConfig(BaseModel):
    """网络结构超参数"""

    image_size: int = 64
    latent_dim: int = 32
    blocks: int = 3
    base_channels: int = 16
    latent_grid: Optional[Tuple[int, int, int]] = None
    regressor_blocks: int = 2
    regressor_channels: int = 16
    regressor_hidden: int = 32

    @model_validator(mode="after")
    def _check(self):
        for name in (
            "image_size",
            "latent_dim",
            "blocks",
            "base_channels",
            "regressor_channels",
            "regressor_hidden",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.regressor_blocks < 0:
            raise ValueError("regressor_blocks must be >= 0")
        if self.image_size % (2**self.blocks) != 0:
            raise ValueError(
                f"image_size {self.image_size} must be divisible by 2**blocks = {2**self.blocks}"
            )
        if self.latent_grid is not None and int(np.prod(self.latent_grid)) != self.latent_dim:
            raise ValueError(
                f"latent_grid {self.latent_grid} does not hold latent_dim {self.latent_dim} values"
            )
        return self

    @property
    def grid(self) -> Tuple[int, int, int]:
        return self.latent_grid or (self.latent_dim, 1, 1)

    @property
    def encoder_channels(self) -> List[int]:
        return [self.base_channels * 2**i for i in range(self.blocks)]

    @property
    def bottom_size(self) -> int:
        return self.image_size // 2**self.blocks


@dataclass
class GaussianLatent:
    """q(z|x) 的对角高斯参数：均值 μ 和对数方差 log λ²，形状均为 (B, D)"""

    mu: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise ShapeMismatchError(
                "GaussianLatent", "mu and log_var differ", [self.mu.shape, self.log_var.shape]
            )

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


@dataclass
class ModelParams:
    """θ_E / θ_D / θ_R 三组参数与结构超参数"""

    arch: ArchConfig
    theta_E: Dict[str, Tensor] = field(default_factory=dict)
    theta_D: Dict[str, Tensor] = field(default_factory=dict)
    theta_R: Dict[str, Tensor] = field(default_factory=dict)

    def group(self, groups: str = "EDR") -> Dict[str, Tensor]:
        """按组名（'E'、'D'、'R' 的组合）返回参数字典"""
        table = {"E": self.theta_E, "D": self.theta_D, "R": self.theta_R}
        out: Dict[str, Tensor] = {}
        for g in groups:
            out.update(table[g])
        return out

    def __getitem__(self, name: str) -> Tensor:
        return self.group()[name]

    def names(self, groups: str = "EDR") -> List[str]:
        return list(self.group(groups))

    def replace(self, updates: Dict[str, Tensor]) -> "ModelParams":
        """返回替换了部分参数张量的新对象（原对象不变）"""
        new = ModelParams(self.arch, dict(self.theta_E), dict(self.theta_D), dict(self.theta_R))
        for name, tensor in updates.items():
            target = new._group_of(name)
            if name not in target:
                raise KeyError(f"unknown parameter {name}")
            if tensor.shape != target[name].shape:
                raise ShapeMismatchError(
                    "replace", f"parameter {name}", [tensor.shape, target[name].shape]
                )
            target[name] = tensor
        return new

    def _group_of(self, name: str) -> Dict[str, Tensor]:
        for g, prefix in GROUP_PREFIXES.items():
            if name.startswith(prefix):
                return self.group_dict(g)
        raise KeyError(f"parameter {name} belongs to no group")

    def group_dict(self, g: str) -> Dict[str, Tensor]:
        return {"E": self.theta_E, "D": self.theta_D, "R": self.theta_R}[g]

    def zero_grad(self) -> None:
        for t in self.group().values():
            t.zero_grad()

    def parameter_count(self, groups: str = "EDR") -> int:
        return int(sum(t.size for t in self.group(groups).values()))

    def digest(self, groups: str = "EDR") -> str:
        """参数原始 float64 字节的 SHA-256，用于快照比较"""
        h = hashlib.sha256()
        for name in sorted(self.group(groups)):
            h.update(name.encode("utf-8"))
            h.update(self[name].values.astype("<f8").tobytes())
        return h.hexdigest()

    def copy(self) -> "ModelParams":
        return self.replace({})


# ---------------------------------------------------------------- 初始化


def _he(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _param(values: np.ndarray, name: str) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def init_params(arch: ArchConfig, seed: int = 0, zero_heads: bool = False) -> ModelParams:
    """
    He 风格 fan-in 初始化，偏置为零，由 seed 决定

    Args:
        arch: 网络结构
        seed: 随机种子
        zero_heads: 为 True 时三个网络的最后一层权重置零

    Returns:
        ModelParams
    """
    rng = np.random.default_rng(seed)
    enc: Dict[str, np.ndarray] = {}
    dec: Dict[str, np.ndarray] = {}
    reg: Dict[str, np.ndarray] = {}
    chans = arch.encoder_channels

    enc["enc.stem.w"] = _he(rng, (chans[0], 1, 3, 3), 9)
    c_in = chans[0]
    for i, c_out in enumerate(chans):
        enc[f"enc.block{i}.conv1.w"] = _he(rng, (c_out, c_in, 3, 3), c_in * 9)
        enc[f"enc.block{i}.conv2.w"] = _he(rng, (c_out, c_out, 3, 3), c_out * 9)
        enc[f"enc.block{i}.skip.w"] = _he(rng, (c_out, c_in, 1, 1), c_in)
        c_in = c_out
    flat = chans[-1] * arch.bottom_size**2
    # 输出头缩小 10 倍，初始 log λ² 接近 0
    for head in ("mu", "logvar"):
        enc[f"enc.{head}.w"] = _he(rng, (flat, arch.latent_dim), flat) * 0.1
        enc[f"enc.{head}.b"] = np.zeros(arch.latent_dim)

    dec["dec.fc.w"] = _he(rng, (arch.latent_dim, flat), arch.latent_dim)
    dec["dec.fc.b"] = np.zeros(flat)
    up = list(reversed(chans)) + [1]
    for i in range(arch.blocks):
        # 步长 2、核 4 的转置卷积：每个输出像素看到每个输入通道 (4/2)^2 个抽头
        dec[f"dec.up{i}.w"] = _he(rng, (up[i], up[i + 1], 4, 4), up[i] * 4)

    gc = arch.grid[0]
    rc = arch.regressor_channels
    reg["reg.stem.w"] = _he(rng, (rc, gc, 3, 3), gc * 9)
    for i in range(arch.regressor_blocks):
        reg[f"reg.block{i}.conv1.w"] = _he(rng, (rc, rc, 3, 3), rc * 9)
        reg[f"reg.block{i}.conv2.w"] = _he(rng, (rc, rc, 3, 3), rc * 9)
    reg["reg.fc1.w"] = _he(rng, (rc, arch.regressor_hidden), rc)
    reg["reg.fc1.b"] = np.zeros(arch.regressor_hidden)
    reg["reg.fc2.w"] = _he(rng, (arch.regressor_hidden, NUM_BITS), arch.regressor_hidden)
    reg["reg.fc2.b"] = np.zeros(NUM_BITS)

    if zero_heads:
        for name in ("enc.mu.w", "enc.logvar.w"):
            enc[name] = np.zeros_like(enc[name])
        last = f"dec.up{arch.blocks - 1}.w"
        dec[last] = np.zeros_like(dec[last])
        reg["reg.fc2.w"] = np.zeros_like(reg["reg.fc2.w"])

    params = ModelParams(
        arch,
        {k: _param(v, k) for k, v in enc.items()},
        {k: _param(v, k) for k, v in dec.items()},
        {k: _param(v, k) for k, v in reg.items()},
    )
    logger.info(
        f"[Model] 初始化参数: E={params.parameter_count('E')}, "
        f"D={params.parameter_count('D')}, R={params.parameter_count('R')} (seed={seed})"
    )
    return params


# ---------------------------------------------------------------- 前向网络


def as_image_batch(x: Union[Tensor, np.ndarray], image_size: int) -> Tensor:
    """(n,n) / (B,n,n) / (B,1,n,n) -> (B,1,n,n) 常量张量"""
    values = x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if values.ndim == 2:
        values = values[None, None]
    elif values.ndim == 3:
        values = values[:, None]
    if values.ndim != 4 or values.shape[1] != 1 or values.shape[2:] != (image_size, image_size):
        raise ShapeMismatchError(
            "encode",
            f"expected image side {image_size}, got shape {np.shape(x.values if isinstance(x, Tensor) else x)}",
            [values.shape],
        )
    if isinstance(x, Tensor) and x.shape == values.shape:
        return x
    return constant(values)


def _down_block(h: Tensor, theta: Dict[str, Tensor], prefix: str) -> Tensor:
    out = F.relu(F.conv2d(h, theta[f"{prefix}.conv1.w"], stride=2, padding=1))
    out = F.conv2d(out, theta[f"{prefix}.conv2.w"], stride=1, padding=1)
    skip = F.conv2d(h, theta[f"{prefix}.skip.w"], stride=2, padding=0)
    return F.relu(F.add(out, skip))


def encode(x: Union[Tensor, np.ndarray], params: ModelParams) -> GaussianLatent:
    """
    f_E(x; θ_E)：输出 q(z|x) 的均值与对数方差

    Args:
        x: 图像 (n,n) 或批量 (B,1,n,n)
        params: 模型参数

    Returns:
        GaussianLatent，mu/log_var 形状 (B, D)
    """
    arch = params.arch
    theta = params.theta_E
    h = as_image_batch(x, arch.image_size)
    batch = h.shape[0]
    h = F.relu(F.conv2d(h, theta["enc.stem.w"], stride=1, padding=1))
    for i in range(arch.blocks):
        h = _down_block(h, theta, f"enc.block{i}")
    h = F.reshape(h, (batch, h.size // batch))
    mu = F.affine(h, theta["enc.mu.w"], theta["enc.mu.b"])
    log_var = F.affine(h, theta["enc.logvar.w"], theta["enc.logvar.b"])
    if not np.all(np.isfinite(log_var.values)):
        raise NumericalError("encoder produced a non-finite log-variance", "NON_FINITE_LATENT")
    return GaussianLatent(mu, log_var)


def sample_latent(q: GaussianLatent, noise: np.ndarray) -> Tensor:
    """
    重参数化采样 z = μ + exp(½ log λ²) ⊙ ε，梯度只流向 μ 和 log λ²

    Args:
        q: 后验参数
        noise: 标准正态噪声 ε，形状 (B, D)（单张图像时可为 (D,)）
    """
    eps = np.asarray(noise, dtype=np.float64)
    if eps.ndim == 1 and q.mu.shape[0] == 1:
        eps = eps[None]
    if eps.shape != q.mu.shape:
        raise ShapeMismatchError(
            "sample_latent", "noise does not match latent shape", [eps.shape, q.mu.shape]
        )
    std = F.exp(F.scale(q.log_var, 0.5))
    return F.add(q.mu, F.mul(std, constant(eps)))


def _check_latent(z: Tensor, arch: ArchConfig, op: str) -> None:
    if z.values.ndim != 2 or z.shape[1] != arch.latent_dim:
        raise ShapeMismatchError(
            op, f"latent must be (B, {arch.latent_dim}), got {z.shape}", [z.shape]
        )


def decode(z: Tensor, params: ModelParams) -> Tensor:
    """f_D(z; θ_D)：生成与输入同尺寸的图像 (B,1,n,n)"""
    arch = params.arch
    _check_latent(z, arch, "decode")
    theta = params.theta_D
    batch = z.shape[0]
    h = F.relu(F.affine(z, theta["dec.fc.w"], theta["dec.fc.b"]))
    side = arch.bottom_size
    h = F.reshape(h, (batch, arch.encoder_channels[-1], side, side))
    for i in range(arch.blocks):
        h = F.conv2d_transpose(h, theta[f"dec.up{i}.w"], stride=2, padding=1)
        if i < arch.blocks - 1:
            h = F.relu(h)
    return h


def regress(z: Tensor, params: ModelParams) -> OrdinalPrediction:
    """
    f_R(z; θ_R)：残差块 + 全局平均池化 + 两层全连接，输出 3 个 sigmoid 概率

    回归器只接收 z（x → z → y 马尔可夫链）。
    """
    arch = params.arch
    _check_latent(z, arch, "regress")
    theta = params.theta_R
    batch = z.shape[0]
    c, gh, gw = arch.grid
    h = F.reshape(z, (batch, c, gh, gw))
    h = F.relu(F.conv2d(h, theta["reg.stem.w"], stride=1, padding=1))
    for i in range(arch.regressor_blocks):
        out = F.relu(F.conv2d(h, theta[f"reg.block{i}.conv1.w"], stride=1, padding=1))
        out = F.conv2d(out, theta[f"reg.block{i}.conv2.w"], stride=1, padding=1)
        h = F.relu(F.add(out, h))
    h = F.avg_pool2d(h, kernel_size=(gh, gw))
    h = F.reshape(h, (batch, arch.regressor_channels))
    h = F.relu(F.affine(h, theta["reg.fc1.w"], theta["reg.fc1.b"]))
    probs = F.sigmoid(F.affine(h, theta["reg.fc2.w"], theta["reg.fc2.b"]))
    return OrdinalPrediction(probs)


def predict_severity(x: Union[Tensor, np.ndarray], params: ModelParams) -> np.ndarray:
    """推理：encode → μ（不采样）→ regress → 期望严重程度"""
    q = encode(x, params)
    return regress(q.mu, params).probs.values.sum(axis=-1)
