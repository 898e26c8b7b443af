"""
数据集记录：单张图像及其病人、标签、报告信息
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..utils.exceptions import DataError

SEVERITY_CLASSES = (0, 1, 2, 3)


@dataclass(eq=False)
class ImageRecord:
    """
    一张灰度 X 光图像

    Attributes:
        image_id: 图像 id（唯一）
        patient_id: 病人 id
        pixels: (n, n) 像素，归一化到 [0, 1]
        severity: 0..3 严重程度类别，None 表示无标签
        report_text: 报告文本
        in_cohort: 是否属于心衰队列（关键词规则可只在队列内生效）
        true_severity: 合成数据的连续真值（仅评估使用）
    """

    image_id: str
    patient_id: str
    pixels: np.ndarray
    severity: Optional[int] = None
    report_text: Optional[str] = None
    in_cohort: bool = True
    true_severity: Optional[float] = None

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 2:
            raise DataError(
                f"image {self.image_id} must be 2-D grayscale, got shape {pixels.shape}",
                image_id=self.image_id,
            )
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise DataError(
                f"image {self.image_id} pixels must be finite and in [0, 1]",
                image_id=self.image_id,
            )
        pixels.setflags(write=False)
        self.pixels = pixels
        if self.severity is not None:
            if int(self.severity) not in SEVERITY_CLASSES:
                raise DataError(
                    f"image {self.image_id} has severity {self.severity} outside 0..3",
                    "INVALID_SEVERITY",
                    image_id=self.image_id,
                )
            self.severity = int(self.severity)

    @property
    def labeled(self) -> bool:
        return self.severity is not None


@dataclass
class Dataset:
    """有标签 + 无标签图像集合（加载或生成后不再修改）"""

    records: List[ImageRecord] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.image_id in seen:
                raise DataError(f"duplicate image_id {r.image_id}", "DUPLICATE_IMAGE", image_id=r.image_id)
            seen.add(r.image_id)
        self._by_id: Dict[str, ImageRecord] = {r.image_id: r for r in self.records}

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, image_id: str) -> ImageRecord:
        return self._by_id[image_id]

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._by_id

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def n_labeled(self) -> int:
        return sum(1 for r in self.records if r.labeled)

    @property
    def labeled(self) -> List[ImageRecord]:
        return [r for r in self.records if r.labeled]

    @property
    def unlabeled(self) -> List[ImageRecord]:
        return [r for r in self.records if not r.labeled]

    @property
    def image_size(self) -> Optional[int]:
        return self.records[0].pixels.shape[0] if self.records else None

    def patients(self) -> List[str]:
        """按首次出现顺序返回病人 id"""
        return list(dict.fromkeys(r.patient_id for r in self.records))

    def subset(self, image_ids: Iterable[str]) -> "Dataset":
        return Dataset([self._by_id[i] for i in image_ids])

    def where(self, patient_ids: Sequence[str]) -> "Dataset":
        wanted = set(patient_ids)
        return Dataset([r for r in self.records if r.patient_id in wanted])

    def severities(self) -> np.ndarray:
        return np.array([r.severity for r in self.labeled], dtype=np.int64)


def label_summary(dataset: Dataset) -> pd.DataFrame:
    """各严重程度的病人数与图像数，外加无标签图像一行"""
    rows = []
    for c in SEVERITY_CLASSES:
        recs = [r for r in dataset if r.severity == c]
        rows.append(
            {"severity": str(c), "patients": len({r.patient_id for r in recs}), "images": len(recs)}
        )
    unlabeled = dataset.unlabeled
    rows.append(
        {
            "severity": "unlabeled",
            "patients": len({r.patient_id for r in unlabeled}),
            "images": len(unlabeled),
        }
    )
    return pd.DataFrame(rows, columns=["severity", "patients", "images"])
