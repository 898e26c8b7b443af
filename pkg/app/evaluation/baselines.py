"""
对比方法：VAE_R（半监督）、仅有标签的监督基线、熵最小化（EM）基线
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd

from ..data.dataset import Dataset
from ..model.model import ArchConfig, ModelParams, init_params
from ..optim.trainer import FitResult, TrainConfig, fit
from ..utils.exceptions import UsageError
from .metrics import Metrics, evaluate, metrics_row, per_class_frame

logger = logging.getLogger(__name__)

METHODS = ("vae_r", "supervised", "em")
DEFAULT_ENTROPY_WEIGHT = 0.1


def train_vae_r(
    params: ModelParams,
    train_labeled: Dataset,
    train_unlabeled: Dataset,
    validation: Dataset,
    config: TrainConfig,
    **fit_kwargs,
) -> FitResult:
    """有标签 + 无标签交替训练；无标签阶段只更新 θ_E, θ_D"""
    config = config.model_copy(update={"entropy_weight": 0.0, "unlabeled_groups": "ED"})
    return fit(params, train_labeled, train_unlabeled, validation, config, **fit_kwargs)


def train_supervised_baseline(
    params: ModelParams,
    train_labeled: Dataset,
    validation: Dataset,
    config: TrainConfig,
    **fit_kwargs,
) -> FitResult:
    """同一网络与损失，只使用有标签图像（无标签集为空）"""
    return fit(params, train_labeled, Dataset([]), validation, config, **fit_kwargs)


def train_em_baseline(
    params: ModelParams,
    train_labeled: Dataset,
    train_unlabeled: Dataset,
    validation: Dataset,
    config: TrainConfig,
    entropy_weight: float = DEFAULT_ENTROPY_WEIGHT,
    **fit_kwargs,
) -> FitResult:
    """
    熵最小化自学习基线

    无标签阶段在 J_KL + J_D 上加 entropy_weight × 逐比特伯努利熵，
    并同时更新 θ_E, θ_D, θ_R。
    """
    if entropy_weight < 0:
        raise UsageError(f"entropy_weight must be >= 0, got {entropy_weight}", "entropy_weight")
    config = config.model_copy(update={"entropy_weight": entropy_weight, "unlabeled_groups": "EDR"})
    return fit(params, train_labeled, train_unlabeled, validation, config, **fit_kwargs)


def train_method(
    method: str,
    params: ModelParams,
    train_labeled: Dataset,
    train_unlabeled: Dataset,
    validation: Dataset,
    config: TrainConfig,
    entropy_weight: float = DEFAULT_ENTROPY_WEIGHT,
    **fit_kwargs,
) -> FitResult:
    """按方法名分派训练"""
    if method == "vae_r":
        return train_vae_r(params, train_labeled, train_unlabeled, validation, config, **fit_kwargs)
    if method == "supervised":
        if train_unlabeled is not None and train_unlabeled.n:
            logger.warning(f"[Baseline] supervised 方法忽略 {train_unlabeled.n} 张无标签图像")
        return train_supervised_baseline(params, train_labeled, validation, config, **fit_kwargs)
    if method == "em":
        return train_em_baseline(
            params, train_labeled, train_unlabeled, validation, config, entropy_weight, **fit_kwargs
        )
    raise UsageError(f"unknown method {method!r}, expected one of {', '.join(METHODS)}", "method")


@dataclass
class ComparisonResult:
    """各方法 × 各种子的测试集指标"""

    rows: List[Dict] = field(default_factory=list)
    per_class: List[pd.DataFrame] = field(default_factory=list)
    metrics: Dict[str, List[Metrics]] = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def mean_rms(self) -> Dict[str, float]:
        return {m: float(sum(x.rms for x in v) / len(v)) for m, v in self.metrics.items() if v}


def run_comparison(
    arch: ArchConfig,
    train_labeled: Dataset,
    train_unlabeled: Dataset,
    validation: Dataset,
    test: Dataset,
    config: TrainConfig,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    methods: Sequence[str] = METHODS,
    entropy_weight: float = DEFAULT_ENTROPY_WEIGHT,
    on_result: Optional[Callable[[str, int, Metrics], None]] = None,
) -> ComparisonResult:
    """
    在同一数据集上训练并测试所有方法

    Args:
        arch: 网络结构
        train_labeled / train_unlabeled / validation / test: 数据划分
        config: 训练设置（seed 字段被逐个种子覆盖）
        seeds: 随机种子列表
        methods: 方法名列表
        entropy_weight: EM 基线的熵权重
        on_result: 每得到一个测试结果后回调

    Returns:
        ComparisonResult
    """
    result = ComparisonResult()
    for seed in seeds:
        seed_config = config.model_copy(update={"seed": int(seed)})
        for method in methods:
            logger.info(f"[Baseline] 训练 {method} (seed={seed})")
            params = init_params(arch, seed=int(seed))
            fitted = train_method(
                method, params, train_labeled, train_unlabeled, validation, seed_config, entropy_weight
            )
            metrics = evaluate(
                fitted.best.params, test, crop_size=seed_config.crop_size, batch_size=seed_config.eval_batch_size
            )
            logger.info(f"[Baseline] {method} seed={seed}: test RMS={metrics.rms:.4f}, CC={metrics.pearson_cc}")
            result.rows.append(metrics_row(method, int(seed), metrics))
            result.per_class.append(per_class_frame(method, int(seed), metrics))
            result.metrics.setdefault(method, []).append(metrics)
            if on_result is not None:
                on_result(method, int(seed), metrics)
    return result
