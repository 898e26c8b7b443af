import math
import unittest
from types import SimpleNamespace
from unittest import mock

import numpy as np
from pydantic import ValidationError

from app.loss import (
    LossConfig,
    Minibatch,
    entropy_penalty,
    kl_loss,
    reconstruction_loss,
    regression_loss,
    total_loss,
)
from app.loss import loss as loss_module
from app.model import ArchConfig, GaussianLatent, OrdinalLabel, OrdinalPrediction, init_params
from app.tensor import constant
from app.utils.exceptions import DataError, MixedBatchError, NumericalError

UNIT = LossConfig(kl_normalizer=1, recon_normalizer=1)


def _latent(mu, log_var):
    return GaussianLatent(constant(np.atleast_2d(mu)), constant(np.atleast_2d(log_var)))


def _pred(probs):
    return OrdinalPrediction(constant(np.atleast_2d(probs)))


class TestLossConfig(unittest.TestCase):
    """测试损失配置"""

    def test_defaults(self):
        """默认归一化为 D 和 n²"""
        config = LossConfig()
        self.assertEqual(config.recon_variance, 10.0)
        self.assertEqual(config.kl_norm(32), 32.0)
        self.assertEqual(config.recon_norm(64 * 64), 4096.0)

    def test_invalid_values(self):
        """非法取值被拒绝"""
        with self.assertRaises(ValidationError):
            LossConfig(recon_variance=0)
        with self.assertRaises(ValidationError):
            LossConfig(kl_normalizer=0.5)
        with self.assertRaises(ValidationError):
            LossConfig(labeled_batch=0)


class TestKL(unittest.TestCase):
    """测试 KL 项"""

    def test_standard_normal_is_zero(self):
        """标准正态的 KL 为 0"""
        value = kl_loss(_latent(np.zeros(5), np.zeros(5)), UNIT)
        self.assertEqual(float(value.values[0]), 0.0)

    def test_unit_mean(self):
        """μ=[1]、log λ²=[0] 时为 0.5"""
        value = kl_loss(_latent([1.0], [0.0]), UNIT)
        self.assertAlmostEqual(float(value.values[0]), 0.5)

    def test_default_normalizer_is_latent_dim(self):
        """默认除以潜变量维度"""
        q = _latent([1.0, 1.0], [0.0, 0.0])
        self.assertAlmostEqual(float(kl_loss(q).values[0]), 0.5)

    def test_non_negative(self):
        """KL 非负，且只在标准正态处为 0"""
        rng = np.random.default_rng(0)
        for _ in range(100):
            q = _latent(rng.normal(size=6), rng.normal(size=6))
            self.assertGreater(float(kl_loss(q, UNIT).values[0]), 0.0)

    def test_non_finite_log_var(self):
        """非有限的对数方差报错"""
        with self.assertRaises(NumericalError):
            kl_loss(_latent([0.0], [np.inf]), UNIT)

    def test_monte_carlo(self):
        """解析 KL 与 E_q[log q − log p] 的蒙特卡洛估计一致"""
        rng = np.random.default_rng(42)
        samples = 100_000
        for _ in range(20):
            mu = rng.normal(size=16)
            log_var = rng.uniform(-1.0, 1.0, size=16)
            eps = rng.standard_normal((samples, 16))
            z = mu + np.exp(0.5 * log_var) * eps
            log_ratio = np.sum(-0.5 * log_var - 0.5 * eps**2 + 0.5 * z**2, axis=1)
            estimate = log_ratio.mean()
            stderr = log_ratio.std(ddof=1) / math.sqrt(samples)
            exact = float(kl_loss(_latent(mu, log_var), UNIT).values[0])
            self.assertLess(abs(estimate - exact), 4 * stderr)


class TestRegressionLoss(unittest.TestCase):
    """测试有序交叉熵"""

    def test_uniform_prediction(self):
        """预测全为 0.5 时损失为 3 ln 2"""
        for c in range(4):
            value = regression_loss(_pred([0.5, 0.5, 0.5]), np.array([c]))
            self.assertAlmostEqual(float(value.values[0]), 3 * math.log(2))

    def test_worked_example(self):
        """pred=[0.9,0.5,0.1]、label=[1,0,0]"""
        value = regression_loss(_pred([0.9, 0.5, 0.1]), OrdinalLabel((1, 0, 0)))
        expected = -math.log(0.9) - math.log(0.5) - math.log(0.9)
        self.assertAlmostEqual(float(value.values[0]), expected, places=12)

    def test_perfect_prediction(self):
        """预测与标签一致时损失接近 0（概率截断后不会出现 inf）"""
        for c in range(4):
            label = OrdinalLabel(tuple(int(c >= j + 1) for j in range(3)))
            value = regression_loss(_pred(label.as_array()), label)
            self.assertLess(float(value.values[0]), 1e-9)

    def test_non_negative(self):
        """交叉熵非负"""
        rng = np.random.default_rng(1)
        probs = rng.uniform(0, 1, size=(50, 3))
        classes = rng.integers(0, 4, size=50)
        self.assertTrue(np.all(regression_loss(_pred(probs), classes).values >= 0))

    def test_label_forms_agree(self):
        """类别数组、标签列表与比特矩阵结果一致"""
        pred = _pred([[0.2, 0.6, 0.3], [0.8, 0.7, 0.1]])
        labels = [OrdinalLabel((1, 0, 0)), OrdinalLabel((1, 1, 1))]
        a = regression_loss(pred, np.array([1, 3])).values
        b = regression_loss(pred, labels).values
        c = regression_loss(pred, np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 1.0]])).values
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)


class TestReconstructionLoss(unittest.TestCase):
    """测试重建项"""

    def test_identical(self):
        """x = x̂ 时为 0"""
        x = constant(np.ones((1, 1, 4, 4)))
        self.assertEqual(float(reconstruction_loss(x, x, UNIT).values[0]), 0.0)

    def test_single_pixel(self):
        """单像素差 1、方差 10、归一化 1 时为 0.05"""
        value = reconstruction_loss(constant([[1.0]]), constant([[0.0]]), UNIT)
        self.assertAlmostEqual(float(value.values[0]), 0.05)

    def test_brute_force(self):
        """与逐像素求和一致"""
        rng = np.random.default_rng(3)
        x = rng.uniform(size=(2, 1, 5, 5))
        x_hat = rng.uniform(size=(2, 1, 5, 5))
        config = LossConfig(recon_variance=10.0)
        value = reconstruction_loss(constant(x), constant(x_hat), config).values
        for b in range(2):
            total = 0.0
            for i in range(5):
                for j in range(5):
                    total += (x[b, 0, i, j] - x_hat[b, 0, i, j]) ** 2
            self.assertAlmostEqual(value[b], 0.5 * total / 10.0 / 25.0, delta=1e-12)


class TestEntropyPenalty(unittest.TestCase):
    """测试熵惩罚"""

    def test_extremes(self):
        """概率 0.5 时最大为 3 ln 2，确定预测时为 0"""
        self.assertAlmostEqual(float(entropy_penalty(_pred([0.5, 0.5, 0.5])).values[0]), 3 * math.log(2))
        self.assertLess(float(entropy_penalty(_pred([1.0, 1.0, 0.0])).values[0]), 1e-9)


class TestMinibatch(unittest.TestCase):
    """测试 minibatch 构建"""

    def _record(self, image_id, severity):
        return SimpleNamespace(image_id=image_id, pixels=np.zeros((4, 4)), severity=severity)

    def test_mixed_records_rejected(self):
        """有标签与无标签混合时报错"""
        with self.assertRaises(MixedBatchError):
            Minibatch.from_records([self._record("a", 1), self._record("b", None)])

    def test_unlabeled_sentinel_rejected(self):
        """有标签批次中出现 -1 报错"""
        with self.assertRaises(MixedBatchError):
            Minibatch(np.zeros((2, 4, 4)), np.array([1, -1]))

    def test_empty_rejected(self):
        """空批次报错"""
        with self.assertRaises(DataError):
            Minibatch.from_records([])

    def test_from_records(self):
        """由记录构建有标签批次"""
        batch = Minibatch.from_records([self._record("a", 2), self._record("b", 0)])
        self.assertTrue(batch.labeled)
        self.assertEqual(batch.images.shape, (2, 1, 4, 4))
        np.testing.assert_array_equal(batch.severities, [2, 0])
        self.assertEqual(list(batch.image_ids), ["a", "b"])


class TestTotalLoss(unittest.TestCase):
    """测试 minibatch 总目标"""

    def setUp(self):
        self.arch = ArchConfig(
            image_size=8, latent_dim=4, blocks=1, base_channels=2,
            regressor_blocks=1, regressor_channels=2, regressor_hidden=3,
        )
        self.params = init_params(self.arch, seed=0)
        rng = np.random.default_rng(9)
        self.images = rng.uniform(0, 1, size=(2, 1, 8, 8))
        self.noise = rng.standard_normal((2, 4))

    def test_unlabeled_has_no_regression(self):
        """无标签批次没有回归项，总和为 KL + 重建"""
        result = total_loss(Minibatch(self.images), self.params, LossConfig(), self.noise)
        self.assertIsNone(result.regression)
        self.assertIsNone(result.entropy)
        self.assertAlmostEqual(result.total, result.kl + result.reconstruction, delta=1e-12)
        self.assertNotIn("regression", result.terms())

    def test_labeled_has_regression(self):
        """有标签批次包含回归项"""
        result = total_loss(Minibatch(self.images, [1, 3]), self.params, LossConfig(), self.noise)
        self.assertIsNotNone(result.regression)
        self.assertAlmostEqual(
            result.total, result.kl + result.reconstruction + result.regression, delta=1e-12
        )

    def test_entropy_weight(self):
        """无标签批次的熵惩罚按权重加入"""
        result = total_loss(Minibatch(self.images), self.params, LossConfig(), self.noise, 0.3)
        self.assertIsNotNone(result.entropy)
        self.assertAlmostEqual(
            result.total, result.kl + result.reconstruction + 0.3 * result.entropy, delta=1e-12
        )

    def test_decomposition(self):
        """两张图像的批次等于两次单图调用的平均"""
        batch = Minibatch(self.images, [0, 2])
        both = total_loss(batch, self.params, LossConfig(), self.noise).total
        singles = [
            total_loss(Minibatch(self.images[i : i + 1], [c]), self.params, LossConfig(), self.noise[i : i + 1]).total
            for i, c in enumerate([0, 2])
        ]
        self.assertAlmostEqual(both, sum(singles) / 2, delta=1e-10)

    def test_duplicated_images(self):
        """重复图像与相同噪声时，批均值等于单图值"""
        images = np.repeat(self.images[:1], 3, axis=0)
        noise = np.repeat(self.noise[:1], 3, axis=0)
        triple = total_loss(Minibatch(images, [1, 1, 1]), self.params, LossConfig(), noise)
        single = total_loss(Minibatch(images[:1], [1]), self.params, LossConfig(), noise[:1])
        self.assertAlmostEqual(triple.total, single.total, delta=1e-12)

    def test_one_sample_per_image(self):
        """每次调用只采样一次潜变量"""
        with mock.patch.object(loss_module, "sample_latent", wraps=loss_module.sample_latent) as spy:
            total_loss(Minibatch(self.images, [1, 2]), self.params, LossConfig(), self.noise)
        self.assertEqual(spy.call_count, 1)

    def test_regressor_sees_only_latent(self):
        """回归器只接收潜变量 z"""
        with mock.patch.object(loss_module, "regress", wraps=loss_module.regress) as spy:
            total_loss(Minibatch(self.images, [1, 2]), self.params, LossConfig(), self.noise)
        z = spy.call_args[0][0]
        self.assertEqual(z.shape, (2, self.arch.latent_dim))

    def test_unlabeled_skips_regressor(self):
        """无标签且无熵惩罚时不调用回归器"""
        with mock.patch.object(loss_module, "regress") as spy:
            total_loss(Minibatch(self.images), self.params, LossConfig(), self.noise)
        spy.assert_not_called()

    def test_generator_noise(self):
        """噪声可以由随机数生成器提供，同一种子结果相同"""
        a = total_loss(Minibatch(self.images), self.params, LossConfig(), np.random.default_rng(4))
        b = total_loss(Minibatch(self.images), self.params, LossConfig(), np.random.default_rng(4))
        self.assertEqual(a.total, b.total)

    def test_missing_noise(self):
        """必须提供噪声"""
        with self.assertRaises(ValueError):
            total_loss(Minibatch(self.images), self.params, LossConfig(), None)


if __name__ == "__main__":
    unittest.main()
