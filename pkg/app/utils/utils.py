import json
import math
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional, Sequence

import numpy as np

from .exceptions import OutputError

# 各训练阶段在计数器随机流中的编号
PHASE_CODES = {
    "labeled": 1,
    "unlabeled": 2,
}


def counter_seed(seed: int, *counters: int) -> np.random.SeedSequence:
    """
    由 (seed, 计数器...) 构造 SeedSequence

    参数:
        seed: 运行种子
        counters: epoch、阶段编号、batch 序号等

    返回:
        SeedSequence，相同输入得到相同随机流
    """
    return np.random.SeedSequence([int(seed), *(int(c) for c in counters)])


def counter_rng(seed: int, *counters: int) -> np.random.Generator:
    """基于 Philox 的计数器随机数生成器"""
    return np.random.Generator(np.random.Philox(counter_seed(seed, *counters)))


def epoch_rng(seed: int, epoch: int, phase: str) -> np.random.Generator:
    """某个 epoch 某个阶段的洗牌随机流"""
    return counter_rng(seed, epoch, PHASE_CODES[phase])


def batch_rngs(seed: int, epoch: int, phase: str, batch_index: int):
    """
    某个 minibatch 的 (增强随机流, 噪声随机流)

    返回:
        两个独立的 Generator，与线程调度无关
    """
    aug, noise = counter_seed(seed, epoch, PHASE_CODES[phase], batch_index + 1).spawn(2)
    return np.random.Generator(np.random.Philox(aug)), np.random.Generator(np.random.Philox(noise))


def batches(indices: Sequence[int], batch_size: int):
    """按 batch_size 切分索引，最后一个 batch 可以不满"""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    for start in range(0, len(indices), batch_size):
        yield list(indices[start : start + batch_size])


def format_float(value: Optional[float], digits: int = 4) -> str:
    """表格显示用；None / NaN 显示为 '-'"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.{digits}f}"


class NumpyJSONEncoder(json.JSONEncoder):
    """自定义JSON编码器, 处理NumPy数据类型"""

    def default(self, obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        elif isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.bool_):
            return bool(obj)
        elif isinstance(obj, tuple):
            return list(obj)
        return super().default(obj)


def dumps(obj: Any) -> str:
    """稳定（键排序）的 JSON 文本"""
    return json.dumps(obj, cls=NumpyJSONEncoder, sort_keys=True, ensure_ascii=False)


def loads(text: str) -> Dict[str, Any]:
    return json.loads(text)


@contextmanager
def output_errors(path: Any) -> Iterator[None]:
    """
    写文件时把 OSError 转换为 OutputError（退出码 2）

    参数:
        path: 正在写入的文件或目录，记录在异常的 details 中
    """
    try:
        yield
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}", str(path)) from e
