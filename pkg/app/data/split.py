"""
按病人划分训练/验证/测试集（病人之间互不重叠）
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..utils import output_errors
from ..utils.exceptions import ManifestError, SplitError
from .dataset import Dataset

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
SPLIT_COLUMNS = ["image_id", "patient_id", "split", "labeled"]


@dataclass
class SplitManifest:
    """image_id -> 划分名，附带病人 id 与是否有标签"""

    assignment: Dict[str, str] = field(default_factory=dict)
    patient_of: Dict[str, str] = field(default_factory=dict)
    labeled: Dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        for image_id, split in self.assignment.items():
            if split not in SPLITS:
                raise SplitError(f"image {image_id} assigned to unknown split {split!r}")

    def __len__(self) -> int:
        return len(self.assignment)

    def split_of(self, image_id: str) -> str:
        return self.assignment[image_id]

    def image_ids(self, split: str, labeled: Optional[bool] = None) -> List[str]:
        return [
            i
            for i, s in self.assignment.items()
            if s == split and (labeled is None or self.labeled[i] == labeled)
        ]

    def training_labeled(self) -> List[str]:
        return self.image_ids("train", labeled=True)

    def training_unlabeled(self) -> List[str]:
        """可用于训练的无标签图像（验证/测试病人的无标签图像已排除）"""
        return self.image_ids("train", labeled=False)

    def patients(self, split: str) -> List[str]:
        return list(dict.fromkeys(self.patient_of[i] for i in self.image_ids(split)))

    def counts(self) -> Dict[str, Dict[str, int]]:
        out = {}
        for split in SPLITS:
            out[split] = {
                "labeled": len(self.image_ids(split, True)),
                "unlabeled": len(self.image_ids(split, False)),
                "patients": len(self.patients(split)),
            }
        return out

    def check(self) -> None:
        """病人不得出现在多个划分中"""
        seen: Dict[str, str] = {}
        for image_id, split in self.assignment.items():
            patient = self.patient_of[image_id]
            if seen.setdefault(patient, split) != split:
                raise SplitError(f"patient {patient} appears in {seen[patient]} and {split}")

    def slices(self, dataset: Dataset) -> Tuple[Dataset, Dataset, Dataset, Dataset]:
        """
        Returns:
            (训练有标签, 训练无标签, 验证, 测试)；验证/测试只包含有标签图像
        """
        missing = [i for i in self.assignment if i not in dataset]
        if missing:
            raise SplitError(f"split refers to {len(missing)} images missing from the dataset, e.g. {missing[0]}")
        return (
            dataset.subset(self.training_labeled()),
            dataset.subset(self.training_unlabeled()),
            dataset.subset(self.image_ids("validation", True)),
            dataset.subset(self.image_ids("test", True)),
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "image_id": i,
                    "patient_id": self.patient_of[i],
                    "split": s,
                    "labeled": int(self.labeled[i]),
                }
                for i, s in self.assignment.items()
            ],
            columns=SPLIT_COLUMNS,
        )

    def write_csv(self, path: Union[str, Path]) -> None:
        with output_errors(path):
            self.to_frame().to_csv(path, index=False, encoding="utf-8")

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "SplitManifest":
        path = Path(path)
        if not path.exists():
            raise ManifestError(f"split file {path} not found", str(path))
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
        missing = [c for c in SPLIT_COLUMNS if c not in df.columns]
        if missing:
            raise ManifestError(f"{path} is missing columns {missing}", str(path), line=1)
        manifest = cls(
            dict(zip(df["image_id"], df["split"])),
            dict(zip(df["image_id"], df["patient_id"])),
            {i: v.strip() in ("1", "true", "True") for i, v in zip(df["image_id"], df["labeled"])},
        )
        manifest.check()
        return manifest

    @classmethod
    def from_patients(cls, dataset: Dataset, patient_split: Dict[str, str]) -> "SplitManifest":
        return cls(
            {r.image_id: patient_split[r.patient_id] for r in dataset},
            {r.image_id: r.patient_id for r in dataset},
            {r.image_id: r.labeled for r in dataset},
        )


def split_by_patient(
    dataset: Dataset,
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitManifest:
    """
    按病人把有标签图像划分到 train/validation/test

    病人按随机顺序逐个分配到"缺口/目标"比例最大的划分（并列时依次取 train、
    validation、test），一个病人的全部图像进入同一个划分。只有无标签图像的
    病人归入 train。

    Args:
        dataset: 数据集
        fractions: 三个划分的目标比例，和为 1
        seed: 随机种子

    Returns:
        SplitManifest
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (len(SPLITS),) or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise SplitError(f"fractions must be three non-negative values summing to 1, got {list(fractions)}")

    labeled_counts: Dict[str, int] = {}
    for r in dataset:
        labeled_counts.setdefault(r.patient_id, 0)
        if r.labeled:
            labeled_counts[r.patient_id] += 1
    labeled_patients = [p for p, k in labeled_counts.items() if k > 0]
    active = [i for i, f in enumerate(fractions) if f > 0]
    if len(labeled_patients) < len(active):
        raise SplitError(
            f"need at least {len(active)} labeled patients to fill the splits, got {len(labeled_patients)}"
        )

    rng = np.random.default_rng(seed)
    order = [labeled_patients[i] for i in rng.permutation(len(labeled_patients))]
    targets = fractions * sum(labeled_counts[p] for p in labeled_patients)
    filled = np.zeros(len(SPLITS))
    patient_split = {p: "train" for p in labeled_counts}
    for patient in order:
        ratios = [
            (targets[i] - filled[i]) / targets[i] if i in active else -np.inf
            for i in range(len(SPLITS))
        ]
        choice = int(np.argmax(ratios))
        patient_split[patient] = SPLITS[choice]
        filled[choice] += labeled_counts[patient]

    manifest = SplitManifest.from_patients(dataset, patient_split)
    manifest.check()
    counts = manifest.counts()
    logger.info(
        "[Split] "
        + ", ".join(f"{s}: {c['labeled']} labeled / {c['patients']} patients" for s, c in counts.items())
    )
    return manifest
