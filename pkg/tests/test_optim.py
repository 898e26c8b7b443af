import math
import os
import shutil
import struct
import tempfile
import unittest
from types import SimpleNamespace
from unittest import mock

import numpy as np

from app.data import Dataset
from app.evaluation import evaluate
from app.loss import LossConfig, Minibatch, total_loss
from app.model import ArchConfig, ModelParams, init_params, predict_severity
from app.optim import (
    AdamState,
    Checkpoint,
    EpochStats,
    MinibatchLoader,
    adam_step,
    fit,
    load_checkpoint,
    save_checkpoint,
    train_epoch,
)
from app.optim.checkpoint import decode_checkpoint, encode_checkpoint
from app.tensor import ComputationGraph, Tensor, backward
from app.utils.exceptions import (
    CheckpointCorruptError,
    CheckpointNotFoundError,
    CheckpointVersionError,
    DataError,
    NonFiniteLossError,
    NumericalError,
    ShapeMismatchError,
    UsageError,
)
from tests.helpers import tiny_arch, tiny_synth, tiny_train_config


def _scalar_params(value=0.0):
    return ModelParams(ArchConfig(), theta_E={"enc.x": Tensor([value], True, "enc.x")})


class TestAdam(unittest.TestCase):
    """测试 Adam 更新"""

    def test_zero_gradient(self):
        """零梯度时参数不变，步数加一"""
        params = _scalar_params(0.7)
        new, state = adam_step(params, {"enc.x": np.zeros(1)}, AdamState())
        np.testing.assert_array_equal(new["enc.x"].values, [0.7])
        self.assertEqual(state.t, 1)

    def test_single_step(self):
        """θ=0、g=1 时一步后约为 −lr"""
        new, _ = adam_step(_scalar_params(), {"enc.x": np.ones(1)}, AdamState())
        self.assertAlmostEqual(float(new["enc.x"].values[0]), -0.001, delta=1e-10)

    def test_step_size_bound(self):
        """恒定梯度下每步更新量不超过 lr"""
        params = _scalar_params()
        state = AdamState()
        for _ in range(100):
            before = float(params["enc.x"].values[0])
            params, state = adam_step(params, {"enc.x": np.full(1, 3.0)}, state)
            step = abs(float(params["enc.x"].values[0]) - before)
            self.assertLessEqual(step, state.lr * (1 + 1e-6))
        self.assertEqual(state.t, 100)

    def test_original_params_untouched(self):
        """adam_step 不修改输入参数"""
        params = _scalar_params(1.0)
        adam_step(params, {"enc.x": np.ones(1)}, AdamState())
        np.testing.assert_array_equal(params["enc.x"].values, [1.0])

    def test_shape_mismatch(self):
        """梯度形状不符时报错"""
        with self.assertRaises(ShapeMismatchError):
            adam_step(_scalar_params(), {"enc.x": np.ones(2)}, AdamState())

    def test_unknown_parameter(self):
        """未知参数名报错"""
        with self.assertRaises(UsageError):
            adam_step(_scalar_params(), {"enc.y": np.ones(1)}, AdamState())

    def test_names_must_be_covered(self):
        """给出 names 时梯度必须恰好覆盖"""
        with self.assertRaises(UsageError):
            adam_step(_scalar_params(), {}, AdamState(), names=("enc.x",))

    def test_invalid_hyperparameters(self):
        """非法超参数被拒绝"""
        with self.assertRaises(UsageError):
            AdamState(lr=0.0)
        with self.assertRaises(UsageError):
            AdamState(beta1=1.0)

    def test_loss_scale_invariance(self):
        """损失乘以常数 c>0：恒定梯度下更新方向的符号不变，幅度变化小于 10%"""
        grad = np.array([3.0, -0.5, 2e-3, -4e-2, 1.0])
        reference = self._constant_gradient_updates(grad)
        for c in (0.01, 0.5, 10.0, 1000.0):
            scaled = self._constant_gradient_updates(c * grad)
            for step, (a, b) in enumerate(zip(reference, scaled)):
                np.testing.assert_array_equal(np.sign(a), np.sign(b), err_msg=f"c={c} step={step}")
                ratio = np.abs(b) / np.abs(a)
                self.assertTrue(np.all(np.abs(ratio - 1.0) < 0.1), f"c={c} step={step}: {ratio}")

    def _constant_gradient_updates(self, grad, steps=20):
        params = ModelParams(ArchConfig(), theta_E={"enc.x": Tensor(np.zeros(grad.shape), True, "enc.x")})
        state = AdamState()
        updates = []
        for _ in range(steps):
            before = params["enc.x"].values
            params, state = adam_step(params, {"enc.x": grad}, state)
            updates.append(params["enc.x"].values - before)
        return updates


class TestCheckpoint(unittest.TestCase):
    """测试检查点读写"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.arch = tiny_arch()
        self.params = init_params(self.arch, seed=2)
        state = AdamState()
        grads = {n: np.full(self.params[n].shape, 0.1) for n in self.params.names("ED")}
        self.params, state = adam_step(self.params, grads, state)
        self.ckpt = Checkpoint(self.params, state, epoch=3, validation_rms=0.75, rng_state={"seed": 2, "stale": 1})
        self.path = os.path.join(self.temp_dir, "model.ckpt")

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_round_trip(self):
        """保存再读取后参数与前向结果逐位一致"""
        save_checkpoint(self.ckpt, self.path)
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.params.digest(), self.params.digest())
        self.assertEqual(loaded.params.arch, self.arch)
        self.assertEqual(loaded.epoch, 3)
        self.assertEqual(loaded.validation_rms, 0.75)
        self.assertEqual(loaded.rng_state, {"seed": 2, "stale": 1})
        self.assertEqual(loaded.adam.t, 1)
        self.assertEqual(loaded.adam.steps, self.ckpt.adam.steps)
        for name, m in self.ckpt.adam.m.items():
            np.testing.assert_array_equal(loaded.adam.m[name], m)
            np.testing.assert_array_equal(loaded.adam.v[name], self.ckpt.adam.v[name])

        x = np.random.default_rng(0).uniform(0, 1, (3, 1, 8, 8))
        np.testing.assert_array_equal(predict_severity(x, loaded.params), predict_severity(x, self.params))

    def test_nan_rms_survives(self):
        """未验证的 RMS (NaN) 可以保存"""
        ckpt = Checkpoint(self.params, AdamState(), epoch=0)
        self.assertTrue(math.isnan(decode_checkpoint(encode_checkpoint(ckpt)).validation_rms))

    def test_truncated(self):
        """截断的文件报损坏错误"""
        data = encode_checkpoint(self.ckpt)
        with open(self.path, "wb") as f:
            f.write(data[: len(data) // 2])
        with self.assertRaises(CheckpointCorruptError):
            load_checkpoint(self.path)

    def test_flipped_byte(self):
        """内容被改动时 CRC 校验失败"""
        data = bytearray(encode_checkpoint(self.ckpt))
        data[len(data) // 2] ^= 0xFF
        with self.assertRaises(CheckpointCorruptError):
            decode_checkpoint(bytes(data))

    def test_version_bump(self):
        """版本号不符时报版本错误"""
        data = encode_checkpoint(self.ckpt)
        bumped = data[:4] + struct.pack("<I", 99) + data[8:]
        with self.assertRaises(CheckpointVersionError) as ctx:
            decode_checkpoint(bumped)
        self.assertEqual(ctx.exception.details["found"], 99)

    def test_missing_file(self):
        """文件不存在"""
        with self.assertRaises(CheckpointNotFoundError):
            load_checkpoint(os.path.join(self.temp_dir, "nope.ckpt"))

    def test_exit_code(self):
        """检查点错误属于数据错误（退出码 2）"""
        with self.assertRaises(CheckpointNotFoundError) as ctx:
            load_checkpoint(os.path.join(self.temp_dir, "nope.ckpt"))
        self.assertEqual(ctx.exception.exit_code, 2)


class TestLoader(unittest.TestCase):
    """测试 minibatch 预取"""

    def setUp(self):
        _, (self.labeled, self.unlabeled, _, _) = tiny_synth()
        self.config = tiny_train_config()

    def _collect(self, threads, epoch=1):
        loader = MinibatchLoader(
            self.labeled.labeled, 3, seed=5, epoch=epoch, phase="labeled",
            augment_params=self.config.augment, threads=threads,
        )
        return [(list(b.batch.image_ids), b.batch.images) for b in loader]

    def test_covers_every_record_once(self):
        """每个 epoch 每张图像恰好出现一次"""
        ids = [i for ids, _ in self._collect(1) for i in ids]
        self.assertEqual(sorted(ids), sorted(r.image_id for r in self.labeled))

    def test_thread_count_does_not_matter(self):
        """多线程预取与同步结果逐位一致"""
        single = self._collect(1)
        threaded = self._collect(3)
        self.assertEqual([i for i, _ in single], [i for i, _ in threaded])
        for (_, a), (_, b) in zip(single, threaded):
            np.testing.assert_array_equal(a, b)

    def test_reshuffled_per_epoch(self):
        """不同 epoch 的顺序由 epoch 决定"""
        first = [i for ids, _ in self._collect(1, epoch=1) for i in ids]
        again = [i for ids, _ in self._collect(1, epoch=1) for i in ids]
        self.assertEqual(first, again)
        orders = {tuple(i for ids, _ in self._collect(1, epoch=e) for i in ids) for e in range(1, 6)}
        self.assertGreater(len(orders), 1)


class TestTrainEpoch(unittest.TestCase):
    """测试一个 epoch 的交替训练"""

    def setUp(self):
        _, (self.tl, self.tu, self.val, _) = tiny_synth()
        self.config = tiny_train_config()
        self.params = init_params(tiny_arch(), seed=0)

    def test_unlabeled_phase_leaves_regressor(self):
        """无标签阶段 θ_R 不变，θ_E 与 θ_D 改变"""
        digests = {}

        def hook(phase, epoch, params):
            digests[phase] = {g: params.digest(g) for g in "EDR"}

        train_epoch(self.params, self.tl, self.tu, self.config, AdamState(), 1, hook)
        self.assertEqual(digests["labeled"]["R"], digests["unlabeled"]["R"])
        self.assertNotEqual(digests["labeled"]["E"], digests["unlabeled"]["E"])
        self.assertNotEqual(digests["labeled"]["D"], digests["unlabeled"]["D"])

    def test_labeled_phase_updates_all_groups(self):
        """有标签阶段更新三组参数"""
        digests = {}
        train_epoch(
            self.params, self.tl, Dataset([]), self.config, AdamState(), 1,
            lambda phase, epoch, params: digests.update({phase: params}),
        )
        for g in "EDR":
            self.assertNotEqual(digests["labeled"].digest(g), self.params.digest(g))

    def test_empty_unlabeled_skips_phase(self):
        """无标签集为空时跳过第二阶段"""
        _, stats = train_epoch(self.params, self.tl, Dataset([]), self.config, AdamState())
        self.assertIsNone(stats.unlabeled)
        self.assertIsNotNone(stats.labeled)

    def test_deterministic(self):
        """相同种子两次运行结果一致"""
        a_params, a_stats = train_epoch(self.params, self.tl, self.tu, self.config, AdamState())
        b_params, b_stats = train_epoch(self.params, self.tl, self.tu, self.config, AdamState())
        self.assertEqual(a_params.digest(), b_params.digest())
        self.assertEqual(a_stats.row(), b_stats.row())

    def test_threads_do_not_change_result(self):
        """预取线程数不影响训练结果"""
        a, _ = train_epoch(self.params, self.tl, self.tu, self.config, AdamState())
        threaded = self.config.model_copy(update={"threads": 3})
        b, _ = train_epoch(self.params, self.tl, self.tu, threaded, AdamState())
        self.assertEqual(a.digest(), b.digest())

    def test_adam_steps_count_batches(self):
        """每个 minibatch 一次 Adam 更新"""
        state = AdamState()
        _, stats = train_epoch(self.params, self.tl, self.tu, self.config, state)
        expected = math.ceil(self.tl.n / 4) + math.ceil(self.tu.n / 4)
        self.assertEqual(state.t, expected)
        self.assertEqual(stats.labeled["batches"] + stats.unlabeled["batches"], expected)

    def test_empty_labeled_rejected(self):
        """有标签集为空时报错"""
        with self.assertRaises(DataError):
            train_epoch(self.params, Dataset([]), self.tu, self.config, AdamState())

    def test_non_finite_latent_names_kl(self):
        """编码器数值异常时报出 kl 项与 epoch"""
        with mock.patch(
            "app.optim.trainer.total_loss",
            side_effect=NumericalError("bad log-variance", "NON_FINITE_LATENT"),
        ):
            with self.assertRaises(NonFiniteLossError) as ctx:
                train_epoch(self.params, self.tl, self.tu, self.config, AdamState(), epoch=4)
        self.assertEqual(ctx.exception.details["term"], "kl")
        self.assertEqual(ctx.exception.details["epoch"], 4)
        self.assertEqual(ctx.exception.exit_code, 3)

    def test_row_columns(self):
        """训练日志行包含各阶段各项损失"""
        row = EpochStats(1, {"kl": 1.0, "total": 2.0}).row()
        self.assertEqual(row["labeled_kl"], 1.0)
        self.assertIsNone(row["labeled_regression"])
        self.assertIsNone(row["unlabeled_total"])
        self.assertIn("validation_rms", row)


class TestGradientPhases(unittest.TestCase):
    """无标签 batch 对 θ_R 的梯度为零"""

    def test_unlabeled_regressor_gradient_is_zero(self):
        """不加熵惩罚时回归器没有梯度"""
        params = init_params(tiny_arch(), seed=1)
        images = np.random.default_rng(0).uniform(0, 1, (2, 8, 8))
        params.zero_grad()
        with ComputationGraph() as graph:
            result = total_loss(Minibatch(images), params, LossConfig(), np.random.default_rng(1))
        backward(graph, result.objective)
        for name in params.names("R"):
            grad = params[name].grad
            self.assertTrue(grad is None or not np.any(grad), name)


class TestFit(unittest.TestCase):
    """测试完整训练与检查点选择"""

    def setUp(self):
        _, (self.tl, self.tu, self.val, _) = tiny_synth()
        self.params = init_params(tiny_arch(), seed=0)

    def test_zero_epochs(self):
        """max_epochs=0 返回初始参数及其验证 RMS"""
        config = tiny_train_config(max_epochs=0)
        result = fit(self.params, self.tl, self.tu, self.val, config)
        self.assertEqual(result.best.epoch, 0)
        self.assertEqual(result.best.params.digest(), self.params.digest())
        self.assertEqual(len(result.log), 1)
        expected = evaluate(self.params, self.val, batch_size=config.eval_batch_size).rms
        self.assertEqual(result.best.validation_rms, expected)

    def test_best_rms_is_reproducible(self):
        """最优检查点记录的 RMS 等于重新评估的结果"""
        config = tiny_train_config(max_epochs=3)
        result = fit(self.params, self.tl, self.tu, self.val, config)
        again = evaluate(result.best.params, self.val, config.crop_size, config.eval_batch_size)
        self.assertEqual(result.best.validation_rms, again.rms)
        logged = [s.validation_rms for s in result.log if s.validation_rms is not None]
        self.assertEqual(result.best.validation_rms, min(logged))
        self.assertEqual([s.epoch for s in result.log], [0, 1, 2, 3])

    def test_resume_matches_uninterrupted_run(self):
        """中断后从 last 检查点续训与一次跑完结果一致"""
        straight = fit(self.params, self.tl, self.tu, self.val, tiny_train_config(max_epochs=2))
        first = fit(self.params, self.tl, self.tu, self.val, tiny_train_config(max_epochs=1))
        last = decode_checkpoint(encode_checkpoint(first.last))
        best = decode_checkpoint(encode_checkpoint(first.best))
        resumed = fit(
            self.params, self.tl, self.tu, self.val, tiny_train_config(max_epochs=2),
            resume=last, resume_best=best,
        )
        self.assertEqual(resumed.last.params.digest(), straight.last.params.digest())
        self.assertEqual(resumed.best.epoch, straight.best.epoch)
        self.assertEqual(resumed.best.validation_rms, straight.best.validation_rms)
        self.assertEqual([s.epoch for s in resumed.log], [2])

    def test_resume_needs_best_checkpoint(self):
        """续训时缺少最优检查点报错，而不是把 last 当作 best"""
        first = fit(self.params, self.tl, self.tu, self.val, tiny_train_config(max_epochs=1))
        with self.assertRaises(UsageError):
            fit(self.params, self.tl, self.tu, self.val, tiny_train_config(max_epochs=2), resume=first.last)

    def test_early_stopping(self):
        """验证 RMS 连续 patience 次未改善时停止"""
        config = tiny_train_config(max_epochs=50, patience=2)
        flat = SimpleNamespace(rms=1.0, pearson_cc=None)
        with mock.patch("app.optim.trainer._validate", return_value=flat):
            result = fit(self.params, self.tl, self.tu, self.val, config)
        self.assertTrue(result.stopped_early)
        self.assertEqual(result.last.epoch, 2)
        self.assertEqual(result.best.epoch, 0)

    def test_validation_must_be_labeled(self):
        """验证集必须全部有标签"""
        with self.assertRaises(DataError):
            fit(self.params, self.tl, self.tu, self.tu, tiny_train_config())


if __name__ == "__main__":
    unittest.main()
