"""
清单读写：图像目录 + 标签 CSV <-> Dataset
"""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from PIL import Image

from ..utils import output_errors
from ..utils.exceptions import ManifestError
from .dataset import SEVERITY_CLASSES, Dataset, ImageRecord

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["image_id", "patient_id", "severity", "report_text"]
REQUIRED_COLUMNS = ["image_id", "patient_id", "severity"]
IMAGE_SUFFIXES = (".png", ".pgm")

PathLike = Union[str, Path]


def normalize_image(raw: np.ndarray) -> np.ndarray:
    """逐图像 min-max 归一化到 [0,1]；常数图像归一化为全零"""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = float(raw.min()), float(raw.max())
    if hi <= lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def read_image(path: PathLike) -> np.ndarray:
    """
    读取 8/16 位灰度 PNG 或 PGM

    Returns:
        归一化到 [0,1] 的 float64 数组
    """
    with Image.open(path) as img:
        if img.mode not in ("L", "I", "I;16", "I;16B", "I;16L", "F"):
            img = img.convert("L")
        raw = np.asarray(img)
    if raw.ndim != 2:
        raise ManifestError(f"{path} is not a single-channel image", str(path))
    return normalize_image(raw)


def write_image(path: PathLike, pixels: np.ndarray, bits: int = 16) -> None:
    """把 [0,1] 像素量化为 8 或 16 位灰度 PNG/PGM"""
    pixels = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    if bits == 16:
        img = Image.fromarray(np.round(pixels * 65535.0).astype(np.uint16))
    elif bits == 8:
        img = Image.fromarray(np.round(pixels * 255.0).astype(np.uint8))
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    img.save(path)


def find_image(images_dir: Path, image_id: str) -> Optional[Path]:
    for suffix in IMAGE_SUFFIXES:
        candidate = images_dir / f"{image_id}{suffix}"
        if candidate.exists():
            return candidate
    return None


def read_labels_csv(labels_csv: PathLike, required=REQUIRED_COLUMNS) -> pd.DataFrame:
    """读取 UTF-8 CSV，全部列按字符串处理，空单元格为空串"""
    path = Path(labels_csv)
    if not path.exists():
        raise ManifestError(f"labels file {path} not found", str(path))
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ManifestError(f"cannot parse {path}: {e}", str(path)) from e
    except pd.errors.EmptyDataError:
        df = pd.DataFrame(columns=list(required))
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ManifestError(f"{path} is missing columns {missing}", str(path), line=1)
    return df


def parse_severity(value: str, path: str, line: int) -> Optional[int]:
    """空串 -> None；其他取值必须是 0..3 的整数"""
    text = (value or "").strip()
    if not text:
        return None
    try:
        severity = int(text)
    except ValueError:
        raise ManifestError(f"line {line}: severity {text!r} is not an integer", path, line)
    if severity not in SEVERITY_CLASSES:
        raise ManifestError(f"line {line}: severity {severity} outside 0..3", path, line)
    return severity


def _parse_cohort(value: str) -> bool:
    return (value or "").strip().lower() not in ("0", "false", "no")


def load_manifest(images_dir: PathLike, labels_csv: PathLike) -> Dataset:
    """
    读取图像目录与标签 CSV

    Args:
        images_dir: 存放 {image_id}.png / {image_id}.pgm 的目录
        labels_csv: 表头 image_id,patient_id,severity,report_text 的 CSV
            （severity 为空表示无标签；可选列 in_cohort）

    Returns:
        Dataset，像素逐图像 min-max 归一化
    """
    images_dir = Path(images_dir)
    path = str(labels_csv)
    df = read_labels_csv(labels_csv)
    logger.info(f"[Data] 读取清单 {path}: {len(df)} 行")

    records = []
    seen = set()
    for idx, row in enumerate(df.to_dict("records")):
        line = idx + 2
        image_id = row["image_id"].strip()
        patient_id = row["patient_id"].strip()
        if not image_id or not patient_id:
            raise ManifestError(f"line {line}: image_id and patient_id are required", path, line)
        if image_id in seen:
            raise ManifestError(f"line {line}: duplicate image_id {image_id}", path, line)
        seen.add(image_id)
        severity = parse_severity(row["severity"], path, line)
        image_path = find_image(images_dir, image_id)
        if image_path is None:
            raise ManifestError(
                f"line {line}: no image file for {image_id} in {images_dir}", path, line
            )
        try:
            pixels = read_image(image_path)
        except (OSError, ValueError) as e:
            raise ManifestError(f"line {line}: cannot read {image_path}: {e}", path, line) from e
        records.append(
            ImageRecord(
                image_id=image_id,
                patient_id=patient_id,
                pixels=pixels,
                severity=severity,
                report_text=row.get("report_text") or None,
                in_cohort=_parse_cohort(row.get("in_cohort", "")),
            )
        )

    dataset = Dataset(records)
    logger.info(f"[Data] 数据集: N={dataset.n}, N_L={dataset.n_labeled}")
    return dataset


def manifest_frame(dataset: Dataset) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "image_id": r.image_id,
                "patient_id": r.patient_id,
                "severity": "" if r.severity is None else str(r.severity),
                "report_text": r.report_text or "",
            }
            for r in dataset
        ],
        columns=MANIFEST_COLUMNS,
    )


def write_manifest(dataset: Dataset, images_dir: PathLike, labels_csv: PathLike, bits: int = 16) -> None:
    """写出图像文件与标签 CSV（load_manifest 的逆操作）"""
    images_dir = Path(images_dir)
    with output_errors(images_dir):
        images_dir.mkdir(parents=True, exist_ok=True)
        for r in dataset:
            write_image(images_dir / f"{r.image_id}.png", r.pixels, bits)
    with output_errors(labels_csv):
        manifest_frame(dataset).to_csv(labels_csv, index=False, encoding="utf-8")
    logger.info(f"[Data] 写出 {dataset.n} 张图像到 {images_dir}")
