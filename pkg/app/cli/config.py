"""
SSVR 运行配置

优先级: --set key=value > 配置文件 (key = value) > SSVR_* 环境变量 > 默认值
"""

import os
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from pydantic import ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ..data.augment import AugmentParams
from ..data.synth import SynthConfig
from ..evaluation.baselines import METHODS
from ..loss.loss import LossConfig
from ..model.model import ArchConfig
from ..optim.trainer import TrainConfig
from ..utils import output_errors
from ..utils.exceptions import ConfigError


RESOLVED_FILE = "config.resolved"
NONE_TOKENS = ("", "none", "null")


class RunConfig(BaseSettings):
    """一次运行的全部设置（扁平键值）"""

    model_config = SettingsConfigDict(env_prefix="SSVR_", extra="forbid")

    # 方法与路径
    method: str = "vae_r"
    data_dir: str = "data/synth"
    images_dir: Optional[str] = None
    labels_file: Optional[str] = None
    split_file: Optional[str] = None
    run_dir: str = "runs/default"
    split_fractions: str = "0.8,0.1,0.1"

    # 网络结构
    image_size: int = 64
    latent_dim: int = 32
    blocks: int = 3
    base_channels: int = 16
    latent_grid: Optional[str] = None
    regressor_blocks: int = 2
    regressor_channels: int = 16
    regressor_hidden: int = 32

    # 训练
    minibatch_size: int = 16
    max_epochs: int = 200
    validation_every: int = 1
    patience: int = 10
    seed: int = 0
    lr: float = 1e-3
    eval_batch_size: int = 64
    entropy_weight: float = 0.1
    benchmark_seeds: str = "0,1,2,3,4"

    # 损失
    recon_variance: float = 10.0
    kl_normalizer: Optional[float] = None
    recon_normalizer: Optional[float] = None
    labeled_batch: Optional[int] = None
    unlabeled_batch: Optional[int] = None

    # 数据增强
    max_rotation_deg: float = 5.0
    max_translation_px: float = 2.0
    crop_size: Optional[int] = None

    # 合成数据
    synth_labeled: int = 100
    synth_unlabeled: int = 5000
    synth_validation: int = 200
    synth_test: int = 200
    synth_noise: float = 0.02
    synth_haze_gain: float = 0.35
    synth_blob_gain: float = 0.05
    synth_blobs: int = 4
    synth_max_images_per_patient: int = 5

    # 运行环境
    threads: int = 1

    # 日志配置
    log_level: str = "INFO"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    log_file: str = "ssvr.log"

    @field_validator("method")
    @classmethod
    def _known_method(cls, v: str) -> str:
        if v not in METHODS:
            raise ValueError(f"method must be one of {', '.join(METHODS)}")
        return v

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, v: str) -> str:
        v = v.upper()
        if v not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {v}")
        return v

    @field_validator("threads")
    @classmethod
    def _positive_threads(cls, v: int) -> int:
        if v < 1:
            raise ValueError("threads must be >= 1")
        return v

    # ------------------------------------------------------------ 读取

    @classmethod
    def load(
        cls, path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()
    ) -> "RunConfig":
        """
        合并配置文件与命令行覆盖项

        Args:
            path: 扁平 `key = value` 配置文件，可为 None
            overrides: `key=value` 形式的覆盖项

        Returns:
            RunConfig
        """
        values: Dict[str, Optional[str]] = {}
        if path is not None:
            values.update(read_config_file(path))
        for item in overrides:
            key, value = parse_assignment(item, source="--set")
            values[key] = value
        return cls.from_values(values)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        return cls.load(path)

    @classmethod
    def from_values(cls, values: Dict[str, Optional[str]]) -> "RunConfig":
        unknown = [k for k in values if k not in cls.model_fields]
        if unknown:
            raise ConfigError(f"unknown configuration key {unknown[0]!r}", key=unknown[0])
        try:
            return cls(**values)
        except ValidationError as e:
            first = e.errors()[0]
            key = ".".join(str(p) for p in first.get("loc", ())) or None
            raise ConfigError(f"invalid value for {key}: {first.get('msg')}", key=key) from e

    # ------------------------------------------------------------ 写出

    def resolved_lines(self) -> List[str]:
        lines = []
        for name in type(self).model_fields:
            value = getattr(self, name)
            lines.append(f"{name} = {'none' if value is None else value}")
        return lines

    def dump(self, path: Union[str, Path]) -> Path:
        """把完整解析后的配置写为 key = value 文本"""
        path = Path(path)
        if path.is_dir():
            path = path / RESOLVED_FILE
        with output_errors(path):
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("\n".join(self.resolved_lines()) + "\n", encoding="utf-8")
        return path

    # ------------------------------------------------------------ 子配置

    def grid(self) -> Optional[Tuple[int, int, int]]:
        if self.latent_grid is None:
            return None
        try:
            grid = tuple(int(p) for p in self.latent_grid.split(","))
        except ValueError:
            raise ConfigError(f"latent_grid must be 'c,h,w', got {self.latent_grid!r}", key="latent_grid")
        if len(grid) != 3:
            raise ConfigError(f"latent_grid must be 'c,h,w', got {self.latent_grid!r}", key="latent_grid")
        return grid

    def _build(self, model, **fields):
        try:
            return model(**fields)
        except ValidationError as e:
            raise ConfigError(f"invalid {model.__name__}: {e.errors()[0].get('msg')}") from e

    def arch_config(self) -> ArchConfig:
        return self._build(
            ArchConfig,
            image_size=self.crop_size or self.image_size,
            latent_dim=self.latent_dim,
            blocks=self.blocks,
            base_channels=self.base_channels,
            latent_grid=self.grid(),
            regressor_blocks=self.regressor_blocks,
            regressor_channels=self.regressor_channels,
            regressor_hidden=self.regressor_hidden,
        )

    def loss_config(self) -> LossConfig:
        return self._build(
            LossConfig,
            recon_variance=self.recon_variance,
            kl_normalizer=self.kl_normalizer,
            recon_normalizer=self.recon_normalizer,
            labeled_batch=self.labeled_batch,
            unlabeled_batch=self.unlabeled_batch,
        )

    def augment_params(self) -> AugmentParams:
        return self._build(
            AugmentParams,
            max_rotation_deg=self.max_rotation_deg,
            max_translation_px=self.max_translation_px,
            crop_size=self.crop_size,
        )

    def train_config(self) -> TrainConfig:
        return self._build(
            TrainConfig,
            minibatch_size=self.minibatch_size,
            max_epochs=self.max_epochs,
            validation_every=self.validation_every,
            patience=self.patience,
            seed=self.seed,
            lr=self.lr,
            threads=min(self.threads, os.cpu_count() or 1),
            eval_batch_size=self.eval_batch_size,
            loss=self.loss_config(),
            augment=self.augment_params(),
        )

    def synth_config(self) -> SynthConfig:
        return self._build(
            SynthConfig,
            image_size=self.image_size,
            labeled=self.synth_labeled,
            unlabeled=self.synth_unlabeled,
            validation=self.synth_validation,
            test=self.synth_test,
            noise=self.synth_noise,
            haze_gain=self.synth_haze_gain,
            blob_gain=self.synth_blob_gain,
            blobs=self.synth_blobs,
            max_images_per_patient=self.synth_max_images_per_patient,
            seed=self.seed,
        )

    def fractions(self) -> Tuple[float, ...]:
        return tuple(_float_list(self.split_fractions, "split_fractions"))

    def seeds(self) -> List[int]:
        return [int(s) for s in _float_list(self.benchmark_seeds, "benchmark_seeds")]

    # ------------------------------------------------------------ 路径

    def images_path(self) -> Path:
        return Path(self.images_dir) if self.images_dir else Path(self.data_dir) / "images"

    def labels_path(self) -> Path:
        return Path(self.labels_file) if self.labels_file else Path(self.data_dir) / "labels.csv"

    def split_path(self) -> Path:
        return Path(self.split_file) if self.split_file else Path(self.data_dir) / "split.csv"


def _float_list(text: str, key: str) -> List[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"{key} must be a comma separated list of numbers, got {text!r}", key=key)


def parse_assignment(text: str, source: str = "<config>", line: Optional[int] = None) -> Tuple[str, Optional[str]]:
    """解析 `key = value`；value 为 none/null/空 时返回 None"""
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or not key:
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: expected 'key = value', got {text.strip()!r}", line=line)
    value = value.strip()
    return key, (None if value.lower() in NONE_TOKENS else value)


def read_config_file(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    """读取扁平 key = value 文件，`#` 开头为注释"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found", key="config")
    values: Dict[str, Optional[str]] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, value = parse_assignment(line, str(path), lineno)
        if key not in RunConfig.model_fields:
            raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}", key=key, line=lineno)
        values[key] = value
    return values
