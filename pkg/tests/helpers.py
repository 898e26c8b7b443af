"""
测试共用的小模型与小数据集
"""

from app.data import SynthConfig, synth_generate
from app.model import ArchConfig
from app.optim import TrainConfig

TINY_ARCH = dict(
    image_size=8,
    latent_dim=4,
    blocks=1,
    base_channels=2,
    regressor_blocks=1,
    regressor_channels=2,
    regressor_hidden=3,
)


def tiny_arch(**overrides) -> ArchConfig:
    return ArchConfig(**{**TINY_ARCH, **overrides})


def tiny_synth(seed: int = 0, **overrides):
    """8×8 图像的小型合成数据集，返回 (SynthResult, 四个划分)"""
    config = SynthConfig(
        **{
            "image_size": 8,
            "labeled": 8,
            "unlabeled": 6,
            "validation": 6,
            "test": 6,
            "max_images_per_patient": 2,
            "seed": seed,
            **overrides,
        }
    )
    result = synth_generate(config)
    return result, result.split.slices(result.dataset)


def tiny_train_config(**overrides) -> TrainConfig:
    return TrainConfig(
        **{
            "minibatch_size": 4,
            "max_epochs": 2,
            "patience": 100,
            "eval_batch_size": 5,
            **overrides,
        }
    )
