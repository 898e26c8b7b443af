"""
评估指标：RMS 误差、Pearson 相关系数、按类别的预测分布
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..data.augment import center_crop
from ..data.dataset import SEVERITY_CLASSES, Dataset
from ..model.model import ModelParams, predict_severity
from ..utils import batches, output_errors
from ..utils.exceptions import DataError, UndefinedCorrelationError

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["method", "seed", "rms", "cc", "n"]
PER_CLASS_COLUMNS = ["method", "seed", "image_id", "true_class", "predicted"]


def _pair(predicted: Sequence[float], target: Sequence[float], minimum: int, name: str):
    a = np.asarray(predicted, dtype=np.float64).ravel()
    b = np.asarray(target, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DataError(f"{name}: inputs differ in length ({a.size} vs {b.size})", "LENGTH_MISMATCH")
    if a.size < minimum:
        raise DataError(f"{name} needs at least {minimum} values, got {a.size}", "EMPTY_INPUT")
    return a, b


def rms_error(predicted: Sequence[float], true_class: Sequence[int]) -> float:
    """√mean((ŷ − y)²)"""
    a, b = _pair(predicted, true_class, 1, "rms_error")
    return float(np.sqrt(np.mean(np.square(a - b))))


def pearson_cc(a: Sequence[float], b: Sequence[float]) -> float:
    """
    样本 Pearson 相关系数

    Raises:
        UndefinedCorrelationError: 任一向量为常数
    """
    x, y = _pair(a, b, 2, "pearson_cc")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(np.dot(xc, xc))
    syy = float(np.dot(yc, yc))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError()
    return float(np.clip(np.dot(xc, yc) / np.sqrt(sxx * syy), -1.0, 1.0))


@dataclass
class Metrics:
    """一次评估的结果"""

    rms: float
    pearson_cc: Optional[float]
    n: int
    per_class_predictions: Dict[int, List[float]] = field(default_factory=dict)
    image_ids: List[str] = field(default_factory=list)
    predictions: Optional[np.ndarray] = field(default=None, repr=False)
    labels: Optional[np.ndarray] = field(default=None, repr=False)

    def class_medians(self) -> Dict[int, Optional[float]]:
        return {
            c: (float(np.median(v)) if v else None)
            for c, v in sorted(self.per_class_predictions.items())
        }

    def medians_increasing(self) -> bool:
        """各类别的预测中位数是否随真实类别严格递增（空类别跳过）"""
        medians = [m for m in self.class_medians().values() if m is not None]
        return all(a < b for a, b in zip(medians, medians[1:]))


def predict_dataset(
    params: ModelParams,
    dataset: Dataset,
    crop_size: Optional[int] = None,
    batch_size: int = 64,
) -> np.ndarray:
    """按固定分块对每张图像预测期望严重程度（中心裁剪，不采样）"""
    records = dataset.records
    preds = []
    for idx in batches(list(range(len(records))), batch_size):
        x = np.stack([center_crop(records[i].pixels, crop_size) for i in idx])[:, None]
        preds.append(predict_severity(x, params))
    return np.concatenate(preds) if preds else np.zeros(0)


def summarize(
    predictions: np.ndarray, labels: np.ndarray, image_ids: Sequence[str] = ()
) -> Metrics:
    rms = rms_error(predictions, labels)
    try:
        cc = pearson_cc(predictions, labels)
    except UndefinedCorrelationError:
        logger.warning("[Eval] 预测或标签为常数，相关系数无定义")
        cc = None
    per_class = {c: [float(p) for p, y in zip(predictions, labels) if y == c] for c in SEVERITY_CLASSES}
    return Metrics(
        rms=rms,
        pearson_cc=cc,
        n=int(len(labels)),
        per_class_predictions=per_class,
        image_ids=list(image_ids),
        predictions=np.asarray(predictions),
        labels=np.asarray(labels),
    )


def evaluate(
    params: ModelParams,
    dataset: Dataset,
    crop_size: Optional[int] = None,
    batch_size: int = 64,
) -> Metrics:
    """
    在有标签数据集上评估：encode → μ → regress → 期望严重程度

    Args:
        params: 模型参数（只读）
        dataset: 全部有标签的数据集
        crop_size: 中心裁剪尺寸，None 表示不裁剪
        batch_size: 推理分块大小

    Returns:
        Metrics
    """
    if dataset.n == 0:
        raise DataError("cannot evaluate on an empty dataset", "EMPTY_SPLIT")
    if dataset.n_labeled != dataset.n:
        raise DataError("evaluation needs a fully labeled dataset", "UNLABELED_IN_EVAL")
    predictions = predict_dataset(params, dataset, crop_size, batch_size)
    labels = np.array([r.severity for r in dataset], dtype=np.int64)
    metrics = summarize(predictions, labels, [r.image_id for r in dataset])
    logger.debug(f"[Eval] n={metrics.n}, RMS={metrics.rms:.4f}, CC={metrics.pearson_cc}")
    return metrics


def metrics_frame(rows: Sequence[Dict]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=METRICS_COLUMNS)


def metrics_row(method: str, seed: int, metrics: Metrics) -> Dict:
    return {"method": method, "seed": seed, "rms": metrics.rms, "cc": metrics.pearson_cc, "n": metrics.n}


def per_class_frame(method: str, seed: int, metrics: Metrics) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "method": method,
            "seed": seed,
            "image_id": metrics.image_ids,
            "true_class": metrics.labels,
            "predicted": metrics.predictions,
        },
        columns=PER_CLASS_COLUMNS,
    )


def write_metrics_csv(rows: Sequence[Dict], path: Union[str, Path]) -> None:
    """写出 method,seed,rms,cc,n"""
    with output_errors(path):
        metrics_frame(rows).to_csv(path, index=False, float_format="%.12g")


def write_per_class_csv(frames: Sequence[pd.DataFrame], path: Union[str, Path]) -> None:
    """写出逐图像的 (真实类别, 预测严重程度)，供外部画图"""
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=PER_CLASS_COLUMNS)
    with output_errors(path):
        frame.to_csv(path, index=False, float_format="%.12g")
