"""
minibatch 预取：线程池提前增强若干个 batch（有界前瞻）
"""

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np

from ..data.augment import AugmentParams, augment
from ..data.dataset import ImageRecord
from ..loss.loss import Minibatch
from ..utils import batch_rngs, batches, epoch_rng

logger = logging.getLogger(__name__)


@dataclass
class LoadedBatch:
    index: int
    batch: Minibatch
    noise_rng: np.random.Generator


class MinibatchLoader:
    """
    按 epoch 洗牌并增强一个阶段的全部 minibatch

    洗牌顺序与每个 batch 的增强/噪声随机流都由 (seed, epoch, phase, batch 序号)
    决定，线程数不影响结果。
    """

    def __init__(
        self,
        records: Sequence[ImageRecord],
        batch_size: int,
        seed: int,
        epoch: int,
        phase: str,
        augment_params: Optional[AugmentParams] = None,
        threads: int = 1,
    ):
        """
        Args:
            records: 本阶段的图像记录（全部有标签或全部无标签）
            batch_size: minibatch 大小
            seed: 运行种子
            epoch: 当前 epoch
            phase: "labeled" / "unlabeled"
            augment_params: 增强参数，None 表示不增强
            threads: 预取线程数（<=1 时同步执行）
        """
        self.records = list(records)
        self.batch_size = int(batch_size)
        self.seed = seed
        self.epoch = epoch
        self.phase = phase
        self.augment_params = augment_params
        self.threads = max(1, int(threads))
        order = epoch_rng(seed, epoch, phase).permutation(len(self.records))
        self.plan: List[List[int]] = list(batches(order.tolist(), self.batch_size))

    def __len__(self) -> int:
        return len(self.plan)

    def _build(self, index: int) -> LoadedBatch:
        aug_rng, noise_rng = batch_rngs(self.seed, self.epoch, self.phase, index)
        recs = [self.records[i] for i in self.plan[index]]
        if self.augment_params is None:
            pixels = [r.pixels for r in recs]
        else:
            pixels = [augment(r.pixels, aug_rng, self.augment_params) for r in recs]
        return LoadedBatch(index, Minibatch.from_records(recs, pixels), noise_rng)

    def __iter__(self) -> Iterator[LoadedBatch]:
        if self.threads <= 1:
            for index in range(len(self.plan)):
                yield self._build(index)
            return

        depth = 2 * self.threads
        with ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="ssvr-loader") as pool:
            pending = deque()
            next_index = 0
            while next_index < len(self.plan) and len(pending) < depth:
                pending.append(pool.submit(self._build, next_index))
                next_index += 1
            while pending:
                loaded = pending.popleft().result()
                if next_index < len(self.plan):
                    pending.append(pool.submit(self._build, next_index))
                    next_index += 1
                yield loaded
