"""
合成"水肿体模"基准：连续严重程度 s ~ U[0,3] 决定肺野雾化与斑片强度
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, field_validator

from ..utils import output_errors
from .dataset import Dataset, ImageRecord
from .manifest import write_manifest
from .split import SplitManifest

logger = logging.getLogger(__name__)

SEVERITY_THRESHOLDS = (0.5, 1.5, 2.5)
MAX_SEVERITY = 3.0

BODY_LEVEL = 0.55
LUNG_DARKENING = 0.4
MARKER_LEVEL = 1.0

REPORT_FINDINGS = {
    0: "No pulmonary edema. Heart size is normal.",
    1: "Mild pulmonary edema with mild vascular congestion.",
    2: "Moderate pulmonary edema. Small bilateral effusions.",
    3: "Severe pulmonary edema with diffuse alveolar opacities.",
}
UNLABELED_FINDINGS = (
    "Lines and tubes are unchanged in position.",
    "Stable cardiomediastinal silhouette. Degenerative changes of the spine.",
    "Comparison with prior study. Left basilar atelectasis.",
    "Interval placement of a right internal jugular catheter.",
)


class SynthConfig(BaseModel):
    """合成数据集设置"""

    image_size: int = 64
    labeled: int = 100
    unlabeled: int = 5000
    validation: int = 200
    test: int = 200
    noise: float = 0.02
    haze_gain: float = 0.35
    blob_gain: float = 0.05
    blobs: int = 4
    max_images_per_patient: int = 5
    seed: int = 0

    @field_validator("labeled", "unlabeled", "validation", "test", "blobs")
    @classmethod
    def _non_negative_count(cls, v: int) -> int:
        if v < 0:
            raise ValueError(f"counts must be >= 0, got {v}")
        return v

    @field_validator("noise", "haze_gain", "blob_gain")
    @classmethod
    def _non_negative_level(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"noise and gains must be >= 0, got {v}")
        return v

    @field_validator("image_size", "max_images_per_patient")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"must be >= 1, got {v}")
        return v


@dataclass
class Anatomy:
    """每个病人的体模几何（中心偏移与半径缩放）"""

    offset: Tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "Anatomy":
        return cls(tuple(rng.uniform(-0.03, 0.03, size=2)), float(rng.uniform(0.98, 1.02)))


@dataclass
class SynthResult:
    dataset: Dataset
    split: SplitManifest
    true_severity: Dict[str, float] = field(default_factory=dict)


def severity_class(s: Union[float, np.ndarray]) -> Union[int, np.ndarray]:
    """连续严重程度按阈值 {0.5, 1.5, 2.5} 离散化"""
    classes = np.digitize(s, SEVERITY_THRESHOLDS)
    return int(classes) if np.ndim(classes) == 0 else classes


def _soft_ellipse(u, v, cx, cy, rx, ry, sharpness: float) -> np.ndarray:
    r = np.sqrt(((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2)
    return 1.0 / (1.0 + np.exp(sharpness * (r - 1.0)))


def _marker_slice(size: int) -> Tuple[slice, slice]:
    m = max(2, size // 16)
    return slice(1, 1 + m), slice(size - 1 - m, size - 1)


def render_phantom(
    size: int,
    severity: float,
    anatomy: Anatomy,
    rng: np.random.Generator,
    config: SynthConfig,
) -> np.ndarray:
    """
    生成一张体模图像

    Args:
        size: 边长 n
        severity: 连续严重程度 s ∈ [0, 3]
        anatomy: 病人几何
        rng: 用于斑片位置与像素噪声
        config: 噪声与强度参数

    Returns:
        (n, n) 像素，含亮度 1 的侧标与 0 的空气背景
    """
    axis = np.linspace(-1.0, 1.0, size)
    v, u = np.meshgrid(axis, axis, indexing="ij")
    ox, oy = anatomy.offset
    k = anatomy.scale

    body = _soft_ellipse(u, v, ox, oy + 0.05, 0.85 * k, 0.9 * k, 12.0)
    lungs = np.zeros_like(u)
    centers = []
    for side in (-1.0, 1.0):
        cx, cy = ox + side * 0.38 * k, oy - 0.05
        centers.append((cx, cy))
        lungs = np.maximum(lungs, _soft_ellipse(u, v, cx, cy, 0.28 * k, 0.55 * k, 10.0))
    lungs = lungs * body

    image = BODY_LEVEL * body - LUNG_DARKENING * lungs
    image += config.haze_gain * (severity / MAX_SEVERITY) * lungs

    for _ in range(config.blobs):
        cx, cy = centers[int(rng.integers(len(centers)))]
        bx = cx + rng.uniform(-0.15, 0.15)
        by = cy + rng.uniform(-0.35, 0.35)
        sigma = rng.uniform(0.08, 0.15)
        blob = np.exp(-((u - bx) ** 2 + (v - by) ** 2) / (2.0 * sigma**2))
        image += config.blob_gain * severity * blob * lungs

    if config.noise > 0:
        image += rng.normal(0.0, config.noise, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    image[_marker_slice(size)] = MARKER_LEVEL
    image[-1, 0] = 0.0
    return image


def _report(rng: np.random.Generator, severity_cls: Union[int, None]) -> str:
    if severity_cls is None:
        return UNLABELED_FINDINGS[int(rng.integers(len(UNLABELED_FINDINGS)))]
    return f"Portable chest radiograph. {REPORT_FINDINGS[severity_cls]}"


def synth_generate(config: SynthConfig) -> SynthResult:
    """
    生成合成数据集及病人不重叠的划分

    四组（训练有标签、训练无标签、验证、测试）各自拥有不同的病人，每个病人
    1..max_images_per_patient 张图像。无标签图像不带类别，但连续真值
    保存在 true_severity 中。

    Args:
        config: 合成设置

    Returns:
        SynthResult
    """
    rng = np.random.default_rng(config.seed)
    groups = [
        ("train", config.labeled, True),
        ("train", config.unlabeled, False),
        ("validation", config.validation, True),
        ("test", config.test, True),
    ]
    records: List[ImageRecord] = []
    patient_split: Dict[str, str] = {}
    truth: Dict[str, float] = {}
    patient_no = 0

    for split, count, labeled in groups:
        remaining = count
        while remaining > 0:
            n_images = min(remaining, int(rng.integers(1, config.max_images_per_patient + 1)))
            patient_id = f"P{patient_no:05d}"
            patient_no += 1
            patient_split[patient_id] = split
            anatomy = Anatomy.sample(rng)
            for _ in range(n_images):
                image_id = f"I{len(records):06d}"
                s = float(rng.uniform(0.0, MAX_SEVERITY))
                cls = severity_class(s)
                pixels = render_phantom(config.image_size, s, anatomy, rng, config)
                records.append(
                    ImageRecord(
                        image_id=image_id,
                        patient_id=patient_id,
                        pixels=pixels,
                        severity=cls if labeled else None,
                        report_text=_report(rng, cls if labeled else None),
                        true_severity=s,
                    )
                )
                truth[image_id] = s
            remaining -= n_images

    dataset = Dataset(records)
    split = SplitManifest.from_patients(dataset, patient_split)
    split.check()
    logger.info(
        f"[Synth] 生成 {dataset.n} 张图像 ({dataset.n_labeled} 有标签), "
        f"{patient_no} 个病人, seed={config.seed}"
    )
    return SynthResult(dataset, split, truth)


def write_synth(result: SynthResult, out_dir: Union[str, Path]) -> Path:
    """
    写出合成数据集目录

    out_dir/images/*.png, labels.csv, truth.csv (image_id,true_severity), split.csv
    """
    out_dir = Path(out_dir)
    with output_errors(out_dir):
        out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(result.dataset, out_dir / "images", out_dir / "labels.csv")
    truth = pd.DataFrame(
        {
            "image_id": list(result.true_severity),
            "true_severity": [f"{s:.17g}" for s in result.true_severity.values()],
        },
        columns=["image_id", "true_severity"],
    )
    with output_errors(out_dir / "truth.csv"):
        truth.to_csv(out_dir / "truth.csv", index=False)
    result.split.write_csv(out_dir / "split.csv")
    logger.info(f"[Synth] 数据集已写入 {out_dir}")
    return out_dir
