"""
交替式 minibatch 训练：每个 epoch 先遍历有标签 batch（更新 θ_E, θ_D, θ_R），
再遍历无标签 batch（更新 θ_E, θ_D），按验证集 RMS 选择检查点并提前停止
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, field_validator

from ..data.augment import AugmentParams
from ..data.dataset import Dataset
from ..loss.loss import LossBreakdown, LossConfig, total_loss
from ..model.model import GROUP_PREFIXES, ModelParams
from ..tensor import ComputationGraph, backward
from ..utils.exceptions import DataError, NonFiniteLossError, NumericalError, UsageError
from .adam import AdamState, adam_step
from .checkpoint import Checkpoint
from .loader import MinibatchLoader

logger = logging.getLogger(__name__)

PhaseHook = Callable[[str, int, ModelParams], None]
EpochHook = Callable[["EpochStats", ModelParams], None]


class TrainConfig(BaseModel):
    """训练设置"""

    minibatch_size: int = 16
    max_epochs: int = 200
    validation_every: int = 1
    patience: int = 10
    seed: int = 0
    lr: float = 1e-3
    threads: int = 1
    entropy_weight: float = 0.0
    unlabeled_groups: str = "ED"
    eval_batch_size: int = 64
    loss: LossConfig = LossConfig()
    augment: Optional[AugmentParams] = AugmentParams()

    @field_validator("minibatch_size", "validation_every", "patience", "threads", "eval_batch_size")
    @classmethod
    def _at_least_one(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"must be >= 1, got {v}")
        return v

    @field_validator("max_epochs")
    @classmethod
    def _non_negative_epochs(cls, v: int) -> int:
        if v < 0:
            raise ValueError(f"max_epochs must be >= 0, got {v}")
        return v

    @field_validator("entropy_weight")
    @classmethod
    def _non_negative_weight(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"entropy_weight must be >= 0, got {v}")
        return v

    @field_validator("unlabeled_groups")
    @classmethod
    def _known_groups(cls, v: str) -> str:
        if not v or any(g not in GROUP_PREFIXES for g in v):
            raise ValueError(f"unlabeled_groups must be letters from 'EDR', got {v!r}")
        return v

    @property
    def labeled_batch(self) -> int:
        return self.loss.labeled_batch or self.minibatch_size

    @property
    def unlabeled_batch(self) -> int:
        return self.loss.unlabeled_batch or self.minibatch_size

    @property
    def crop_size(self) -> Optional[int]:
        return self.augment.crop_size if self.augment is not None else None


@dataclass
class EpochStats:
    """一个 epoch 的阶段平均损失与验证指标"""

    epoch: int
    labeled: Optional[Dict[str, float]] = None
    unlabeled: Optional[Dict[str, float]] = None
    validation_rms: Optional[float] = None
    validation_cc: Optional[float] = None

    def row(self) -> Dict[str, Optional[float]]:
        """训练日志 CSV 的一行"""
        out: Dict[str, Optional[float]] = {"epoch": self.epoch}
        for phase, terms in (("labeled", self.labeled), ("unlabeled", self.unlabeled)):
            for term in ("kl", "regression", "reconstruction", "entropy", "total"):
                out[f"{phase}_{term}"] = (terms or {}).get(term)
        out["validation_rms"] = self.validation_rms
        out["validation_cc"] = self.validation_cc
        return out


@dataclass
class FitResult:
    best: Checkpoint
    last: Checkpoint
    log: List[EpochStats] = field(default_factory=list)
    stopped_early: bool = False


def _mean_breakdowns(items: List[LossBreakdown]) -> Dict[str, float]:
    total_images = sum(b.batch_size for b in items)
    out: Dict[str, float] = {}
    for name in items[0].terms():
        out[name] = sum(b.terms()[name] * b.batch_size for b in items) / total_images
    out["batches"] = float(len(items))
    out["images"] = float(total_images)
    return out


def run_phase(
    params: ModelParams,
    loader: MinibatchLoader,
    config: TrainConfig,
    state: AdamState,
    groups: str,
    epoch: int,
    entropy_weight: float = 0.0,
) -> Tuple[ModelParams, Dict[str, float]]:
    """
    遍历一个阶段的全部 minibatch，每个 batch 做一次反向传播和 Adam 更新

    Args:
        params: 当前参数
        loader: 本阶段的 minibatch
        config: 训练设置
        state: Adam 状态
        groups: 本阶段更新的参数组，例如 "EDR" 或 "ED"
        epoch: 当前 epoch（出错信息使用）
        entropy_weight: 无标签阶段的熵惩罚权重

    Returns:
        (更新后的参数, 阶段平均损失)
    """
    breakdowns: List[LossBreakdown] = []
    names = params.names(groups)
    for loaded in loader:
        params.zero_grad()
        with ComputationGraph() as graph:
            try:
                breakdown = total_loss(
                    loaded.batch, params, config.loss, loaded.noise_rng, entropy_weight
                )
            except NumericalError as e:
                if e.error_code == "NON_FINITE_LATENT":
                    raise NonFiniteLossError("kl", epoch, loader.phase) from e
                raise
            bad = breakdown.first_non_finite()
            if bad is not None:
                raise NonFiniteLossError(bad, epoch, loader.phase)
            backward(graph, breakdown.objective)
        grads = {n: params[n].grad for n in names if params[n].grad is not None}
        params, state = adam_step(params, grads, state)
        breakdowns.append(breakdown)
    return params, _mean_breakdowns(breakdowns)


def train_epoch(
    params: ModelParams,
    labeled: Dataset,
    unlabeled: Dataset,
    config: TrainConfig,
    state: AdamState,
    epoch: int = 1,
    on_phase_end: Optional[PhaseHook] = None,
) -> Tuple[ModelParams, EpochStats]:
    """
    一个 epoch：先有标签阶段，再无标签阶段（无标签集为空时跳过）

    Args:
        params: 当前参数
        labeled: 训练有标签集（非空）
        unlabeled: 训练无标签集（可为空）
        config: 训练设置
        state: Adam 状态（原地更新）
        epoch: epoch 序号，决定洗牌与噪声随机流
        on_phase_end: 每个阶段结束后回调 (phase, epoch, params)

    Returns:
        (更新后的参数, EpochStats)
    """
    if labeled.n_labeled == 0:
        raise DataError("training needs a nonempty labeled set", "EMPTY_LABELED_SET")
    stats = EpochStats(epoch)

    loader = MinibatchLoader(
        labeled.labeled, config.labeled_batch, config.seed, epoch, "labeled", config.augment, config.threads
    )
    params, stats.labeled = run_phase(params, loader, config, state, "EDR", epoch)
    if on_phase_end is not None:
        on_phase_end("labeled", epoch, params)

    pool = unlabeled.unlabeled if unlabeled is not None else []
    if pool:
        loader = MinibatchLoader(
            pool, config.unlabeled_batch, config.seed, epoch, "unlabeled", config.augment, config.threads
        )
        params, stats.unlabeled = run_phase(
            params, loader, config, state, config.unlabeled_groups, epoch, config.entropy_weight
        )
        if on_phase_end is not None:
            on_phase_end("unlabeled", epoch, params)
    return params, stats


def _validate(params: ModelParams, validation: Dataset, config: TrainConfig, epoch: int):
    from ..evaluation.metrics import evaluate

    metrics = evaluate(params, validation, crop_size=config.crop_size, batch_size=config.eval_batch_size)
    if not math.isfinite(metrics.rms):
        raise NonFiniteLossError("validation_rms", epoch, "validation")
    return metrics


def _progress(seed: int, epoch: int, best_rms: float, best_epoch: int, stale: int) -> Dict[str, float]:
    return {"seed": seed, "epoch": epoch, "best_rms": best_rms, "best_epoch": best_epoch, "stale": stale}


def fit(
    params: ModelParams,
    train_labeled: Dataset,
    train_unlabeled: Dataset,
    validation: Dataset,
    config: TrainConfig,
    resume: Optional[Checkpoint] = None,
    resume_best: Optional[Checkpoint] = None,
    on_epoch_end: Optional[EpochHook] = None,
    on_phase_end: Optional[PhaseHook] = None,
) -> FitResult:
    """
    重复 train_epoch 直到收敛（验证 RMS 连续 patience 次未改善）或达到 max_epochs

    Args:
        params: 初始参数（resume 时忽略）
        train_labeled: 训练有标签集
        train_unlabeled: 训练无标签集（可为空）
        validation: 有标签验证集，与训练集病人不重叠
        config: 训练设置
        resume: 从该检查点（上一次的 last）继续训练
        resume_best: 续训时的最优检查点（给出 resume 时必需）
        on_epoch_end: 每个 epoch 结束后回调 (EpochStats, params)
        on_phase_end: 每个阶段结束后回调

    Returns:
        FitResult（验证 RMS 最低的检查点、最后一个检查点、训练日志）
    """
    if validation.n_labeled == 0 or validation.n_labeled != validation.n:
        raise DataError("validation set must be nonempty and fully labeled", "INVALID_VALIDATION_SET")
    if resume is not None and resume_best is None:
        raise UsageError("resuming needs the best checkpoint of the interrupted run", "resume_best")

    log: List[EpochStats] = []
    if resume is None:
        state = AdamState(lr=config.lr)
        metrics = _validate(params, validation, config, 0)
        start = 1
        best_rms, best_epoch, stale = metrics.rms, 0, 0
        stats = EpochStats(0, validation_rms=metrics.rms, validation_cc=metrics.pearson_cc)
        log.append(stats)
        best = Checkpoint(
            params.copy(), state.copy(), 0, metrics.rms, _progress(config.seed, 0, best_rms, 0, 0)
        )
        logger.info(f"[Train] epoch 0: validation RMS={metrics.rms:.4f}")
        if on_epoch_end is not None:
            on_epoch_end(stats, params)
    else:
        params = resume.params
        state = resume.adam.copy()
        progress = resume.rng_state
        if int(progress.get("seed", config.seed)) != config.seed:
            logger.warning(f"[Train] 续训种子 {progress.get('seed')} 与配置 {config.seed} 不一致")
        start = resume.epoch + 1
        best_rms = float(progress.get("best_rms", resume.validation_rms))
        best_epoch = int(progress.get("best_epoch", resume.epoch))
        stale = int(progress.get("stale", 0))
        best = resume_best
        logger.info(f"[Train] 从 epoch {resume.epoch} 继续训练 (best RMS={best_rms:.4f} @ {best_epoch})")

    last = Checkpoint(
        params.copy(),
        state.copy(),
        start - 1,
        best_rms,
        _progress(config.seed, start - 1, best_rms, best_epoch, stale),
    )
    stopped_early = False
    if train_unlabeled is None or train_unlabeled.n == 0:
        logger.info("[Train] 无标签集为空，跳过无标签阶段")

    for epoch in range(start, config.max_epochs + 1):
        params, stats = train_epoch(
            params, train_labeled, train_unlabeled, config, state, epoch, on_phase_end
        )
        summary = f"[Train] epoch {epoch}: labeled total={stats.labeled['total']:.4f}"
        if stats.unlabeled is not None:
            summary += f", unlabeled total={stats.unlabeled['total']:.4f}"

        rms = math.nan
        if epoch % config.validation_every == 0 or epoch == config.max_epochs:
            metrics = _validate(params, validation, config, epoch)
            rms = metrics.rms
            stats.validation_rms = metrics.rms
            stats.validation_cc = metrics.pearson_cc
            summary += f", validation RMS={rms:.4f}"
            if rms < best_rms:
                best_rms, best_epoch, stale = rms, epoch, 0
                best = Checkpoint(
                    params.copy(), state.copy(), epoch, rms, _progress(config.seed, epoch, best_rms, best_epoch, 0)
                )
                summary += " (best)"
            else:
                stale += 1
        logger.info(summary)
        log.append(stats)
        last = Checkpoint(
            params.copy(), state.copy(), epoch, rms, _progress(config.seed, epoch, best_rms, best_epoch, stale)
        )
        if on_epoch_end is not None:
            on_epoch_end(stats, params)
        if stale >= config.patience:
            stopped_early = True
            logger.info(f"[Train] 验证 RMS 连续 {stale} 次未改善，在 epoch {epoch} 提前停止")
            break

    logger.info(f"[Train] 最优检查点: epoch {best.epoch}, validation RMS={best.validation_rms:.4f}")
    return FitResult(best, last, log, stopped_early)
