"""
检查点的二进制读写

文件布局（小端）:
    "SSVR" | u32 版本 | u32 长度 + 结构超参数 JSON | u32 epoch | f64 验证 RMS
    | u32 长度 + 随机状态 JSON
    | u32 参数个数 | 每个参数 {u16 名称长度, 名称, u8 维数, u32 × 维数, float64 数据}
    | Adam {u64 t, f64 lr/beta1/beta2/eps, u32 个数, 每项 {名称, u64 步数, 形状, m, v}}
    | u32 CRC32（覆盖之前全部字节）
"""

import logging
import math
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from ..model.model import GROUP_PREFIXES, ArchConfig, ModelParams
from ..tensor import Tensor
from ..utils import dumps, loads
from ..utils.exceptions import (
    CheckpointCorruptError,
    CheckpointError,
    CheckpointNotFoundError,
    CheckpointVersionError,
)
from .adam import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"SSVR"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    """参数快照 + 优化器状态 + 训练进度"""

    params: ModelParams
    adam: AdamState
    epoch: int = 0
    validation_rms: float = math.nan
    rng_state: Dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION


class _Writer:
    def __init__(self):
        self.parts: List[bytes] = []

    def pack(self, fmt: str, *values) -> None:
        self.parts.append(struct.pack("<" + fmt, *values))

    def text(self, value: str, width: str = "I") -> None:
        data = value.encode("utf-8")
        self.pack(width, len(data))
        self.parts.append(data)

    def array(self, values: np.ndarray) -> None:
        self.parts.append(np.ascontiguousarray(values, dtype="<f8").tobytes())

    def shape(self, shape: Tuple[int, ...]) -> None:
        self.pack("B", len(shape))
        if shape:
            self.pack(f"{len(shape)}I", *shape)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointCorruptError(f"checkpoint {self.path} is truncated", self.path)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def text(self, width: str = "I") -> str:
        n = self.unpack(width)
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointCorruptError(f"checkpoint {self.path}: bad text field", self.path) from e

    def shape(self) -> Tuple[int, ...]:
        ndim = self.unpack("B")
        if ndim == 0:
            return ()
        dims = self.unpack(f"{ndim}I")
        return (dims,) if isinstance(dims, int) else tuple(dims)

    def array(self, shape: Tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    w = _Writer()
    w.parts.append(MAGIC)
    w.pack("I", ckpt.version)
    w.text(ckpt.params.arch.model_dump_json())
    w.pack("I", int(ckpt.epoch))
    w.pack("d", float(ckpt.validation_rms))
    w.text(dumps(ckpt.rng_state))

    tensors = ckpt.params.group()
    w.pack("I", len(tensors))
    for name, tensor in tensors.items():
        w.text(name, "H")
        w.shape(tensor.shape)
        w.array(tensor.values)

    adam = ckpt.adam
    w.pack("Q", adam.t)
    w.pack("4d", adam.lr, adam.beta1, adam.beta2, adam.eps)
    w.pack("I", len(adam.m))
    for name in adam.m:
        w.text(name, "H")
        w.pack("Q", adam.steps.get(name, 0))
        w.shape(adam.m[name].shape)
        w.array(adam.m[name])
        w.array(adam.v[name])

    body = w.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(data: bytes, path: str = "<bytes>") -> Checkpoint:
    if len(data) < 12:
        raise CheckpointCorruptError(f"checkpoint {path} is truncated", path)
    if data[:4] != MAGIC:
        raise CheckpointCorruptError(f"{path} is not a checkpoint (bad magic)", path)
    (version,) = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(version, FORMAT_VERSION, path)
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointCorruptError(f"checkpoint {path} failed its CRC32 check", path)

    r = _Reader(body, path)
    r.take(8)
    try:
        arch = ArchConfig.model_validate_json(r.text())
        epoch = r.unpack("I")
        validation_rms = r.unpack("d")
        rng_state = loads(r.text())

        groups: Dict[str, Dict[str, Tensor]] = {g: {} for g in GROUP_PREFIXES}
        for _ in range(r.unpack("I")):
            name = r.text("H")
            values = r.array(r.shape())
            group = next((g for g, p in GROUP_PREFIXES.items() if name.startswith(p)), None)
            if group is None:
                raise CheckpointCorruptError(f"checkpoint {path}: parameter {name} has no group", path)
            groups[group][name] = Tensor(values, requires_grad=True, name=name)

        t = r.unpack("Q")
        lr, beta1, beta2, eps = r.unpack("4d")
        adam = AdamState(lr, beta1, beta2, eps, t)
        for _ in range(r.unpack("I")):
            name = r.text("H")
            adam.steps[name] = r.unpack("Q")
            shape = r.shape()
            adam.m[name] = r.array(shape)
            adam.v[name] = r.array(shape)
    except (ValueError, struct.error) as e:
        raise CheckpointCorruptError(f"checkpoint {path} is malformed: {e}", path) from e
    if r.pos != len(body):
        raise CheckpointCorruptError(f"checkpoint {path} has trailing bytes", path)

    params = ModelParams(arch, groups["E"], groups["D"], groups["R"])
    return Checkpoint(params, adam, epoch, validation_rms, rng_state, version)


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> Path:
    """
    原子写入检查点（先写临时文件再 os.replace）

    Args:
        ckpt: 检查点
        path: 目标路径

    Returns:
        写入的路径
    """
    path = Path(path)
    data = encode_checkpoint(ckpt)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}", str(path)) from e
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise CheckpointError(f"cannot write checkpoint {path}: {e}", str(path)) from e
    logger.info(f"[Checkpoint] 已保存 {path} (epoch={ckpt.epoch}, rms={ckpt.validation_rms:.4f})")
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    """
    读取检查点；依次检查魔数、版本、CRC

    Raises:
        CheckpointNotFoundError / CheckpointVersionError / CheckpointCorruptError
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointNotFoundError(str(path))
    ckpt = decode_checkpoint(path.read_bytes(), str(path))
    logger.info(f"[Checkpoint] 已读取 {path} (epoch={ckpt.epoch})")
    return ckpt
