"""
在线数据增强：随机旋转 + 平移 + 中心裁剪
"""

from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, field_validator
from skimage import transform

from ..utils.exceptions import AugmentationError


class AugmentParams(BaseModel):
    """增强参数；crop_size 为 None 时保持原尺寸"""

    max_rotation_deg: float = 5.0
    max_translation_px: float = 2.0
    crop_size: Optional[int] = None

    @field_validator("max_rotation_deg", "max_translation_px")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"augmentation ranges must be >= 0, got {v}")
        return v

    @field_validator("crop_size")
    @classmethod
    def _positive_crop(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError(f"crop_size must be >= 1, got {v}")
        return v


def rotation_about_center(
    shape: Tuple[int, int], angle_deg: float, shift: Tuple[float, float] = (0.0, 0.0)
) -> transform.AffineTransform:
    """绕图像中心旋转 angle_deg 度再平移 shift=(dx, dy) 像素的仿射变换"""
    h, w = shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    to_origin = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    rotate = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    back = np.array([[1.0, 0.0, cx + shift[0]], [0.0, 1.0, cy + shift[1]], [0.0, 0.0, 1.0]])
    return transform.AffineTransform(matrix=back @ rotate @ to_origin)


def warp_image(
    image: np.ndarray, angle_deg: float, shift: Tuple[float, float] = (0.0, 0.0)
) -> np.ndarray:
    """双线性插值、零填充的旋转平移"""
    if angle_deg == 0 and shift[0] == 0 and shift[1] == 0:
        return np.array(image, dtype=np.float64)
    tform = rotation_about_center(image.shape, angle_deg, shift)
    return transform.warp(
        np.array(image, dtype=np.float64),
        tform.inverse,
        order=1,
        mode="constant",
        cval=0.0,
        preserve_range=True,
    )


def center_crop(image: np.ndarray, crop_size: Optional[int]) -> np.ndarray:
    """中心裁剪为 crop_size×crop_size；None 表示不裁剪"""
    h, w = image.shape
    if crop_size is None or (crop_size == h and crop_size == w):
        return image
    if crop_size > min(h, w):
        raise AugmentationError(f"crop size {crop_size} exceeds image size {h}x{w}")
    top = (h - crop_size) // 2
    left = (w - crop_size) // 2
    return image[top : top + crop_size, left : left + crop_size]


def augment(image: np.ndarray, rng: np.random.Generator, params: AugmentParams) -> np.ndarray:
    """
    随机旋转、平移后中心裁剪，结果截断到 [0,1]

    Args:
        image: (n, n) 像素
        rng: 随机数生成器（每次调用都重新抽样）
        params: 增强参数

    Returns:
        (crop, crop) 像素
    """
    image = np.asarray(image, dtype=np.float64)
    if params.crop_size is not None and params.crop_size > min(image.shape):
        raise AugmentationError(
            f"crop size {params.crop_size} exceeds image size {image.shape[0]}x{image.shape[1]}"
        )
    angle = rng.uniform(-params.max_rotation_deg, params.max_rotation_deg) if params.max_rotation_deg else 0.0
    t = params.max_translation_px
    shift = tuple(rng.uniform(-t, t, size=2)) if t else (0.0, 0.0)
    warped = warp_image(image, angle, shift)
    return np.clip(center_crop(warped, params.crop_size), 0.0, 1.0)
