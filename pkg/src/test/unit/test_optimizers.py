"""
優化器單元測試
"""

import math
import unittest

import numpy as np

from src.main.python.core.exceptions import NonFiniteError, OptimizerLoadError
from src.main.python.core.optimizers.adam_optimizer import AdamOptimizer
from src.main.python.core.optimizers.gd_momentum_optimizer import GdMomentumOptimizer
from src.main.python.core.optimizers.gd_optimizer import GdOptimizer
from src.main.python.core.training import load_optimizer
from src.main.python.models.model_params import ModelParams
from src.main.python.models.train_config import OptimizerName, TrainConfig


def params(value, T=2, d=2, H=1):
    return ModelParams(np.full((H, T, d), value), np.full((H, d, d), value))


class TestOptimizerLoading(unittest.TestCase):
    """按名稱動態加載"""

    def test_each_name_loads_its_class(self):
        """每個配置名稱對應一個優化器類"""
        expected = {
            OptimizerName.GD: GdOptimizer,
            OptimizerName.GD_MOMENTUM: GdMomentumOptimizer,
            OptimizerName.ADAM: AdamOptimizer,
        }
        for name, cls in expected.items():
            optimizer = load_optimizer(TrainConfig(K=1, optimizer=name, eta=0.1), 0.1)
            self.assertIsInstance(optimizer, cls)
            self.assertEqual(optimizer.get_optimizer_info()['eta'], 0.1)

    def test_unknown_name_in_config(self):
        """未知名稱在配置層被拒絕"""
        with self.assertRaises(ValueError):
            TrainConfig(K=1, optimizer='sgd', eta=0.1)

    def test_load_error_is_wrapped(self):
        """加載失敗時轉為 OptimizerLoadError"""
        config = TrainConfig(K=1, eta=0.1)
        config.optimizer = type('Fake', (), {'value': 'missing'})()
        with self.assertRaises(OptimizerLoadError):
            load_optimizer(config, 0.1)


class TestGdOptimizer(unittest.TestCase):
    """普通梯度下降"""

    def test_step(self):
        """θ′ = θ − ηg"""
        optimizer = GdOptimizer(TrainConfig(K=1, eta=0.5), 0.5)
        new = optimizer.step(params(1.0), params(2.0))
        self.assertTrue(new.allclose(params(0.0)))
        self.assertEqual(optimizer.steps, 1)

    def test_non_finite_gradient(self):
        """非有限梯度報錯"""
        optimizer = GdOptimizer(TrainConfig(K=1, eta=0.5), 0.5)
        with self.assertRaises(NonFiniteError):
            optimizer.step(params(1.0), params(math.nan))


class TestMomentumOptimizer(unittest.TestCase):
    """Heavy-ball 動量"""

    def setUp(self):
        self.optimizer = GdMomentumOptimizer(TrainConfig(K=2, optimizer='gd_momentum', eta=1.0, momentum=0.5), 1.0)

    def test_first_step_is_gd(self):
        """第一步與 GD 相同"""
        new = self.optimizer.step(params(0.0), params(1.0))
        self.assertTrue(new.allclose(params(-1.0)))

    def test_velocity_accumulates(self):
        """v ← μv + g"""
        th = self.optimizer.step(params(0.0), params(1.0))
        th = self.optimizer.step(th, params(1.0))
        self.assertTrue(th.allclose(params(-2.5)))

    def test_reset(self):
        """reset 清除速度"""
        self.optimizer.step(params(0.0), params(1.0))
        self.optimizer.reset()
        self.assertIsNone(self.optimizer.velocity)
        self.assertEqual(self.optimizer.steps, 0)


class TestAdamOptimizer(unittest.TestCase):
    """Adam"""

    def test_first_step_follows_gradient_sign(self):
        """偏差修正後第一步約為 η·sign(g)"""
        optimizer = AdamOptimizer(TrainConfig(K=1, optimizer='adam', eta=0.01), 0.01)
        grad = ModelParams(np.array([[[3.0, -0.2], [0.1, -5.0]]]), np.array([[[2.0, 0.0], [-1.0, 0.5]]]))
        new = optimizer.step(params(0.0), grad)
        expected = -0.01 * np.sign(grad.flatten())
        np.testing.assert_allclose(new.flatten(), expected, atol=1e-7)

    def test_tied_replicas_are_preserved(self):
        """更新後副本數不變"""
        optimizer = AdamOptimizer(TrainConfig(K=1, optimizer='adam', eta=0.01), 0.01)
        th = ModelParams(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), replicas=3)
        grad = ModelParams(np.ones((1, 2, 2)), np.ones((1, 2, 2)), replicas=3)
        self.assertEqual(optimizer.step(th, grad).replicas, 3)

    def test_info(self):
        """信息包含超參數"""
        optimizer = AdamOptimizer(TrainConfig(K=1, optimizer='adam', eta=0.01, adam_beta2=0.99), 0.01)
        info = optimizer.get_optimizer_info()
        self.assertEqual(info['name'], 'AdamOptimizer')
        self.assertEqual(info['beta2'], 0.99)


if __name__ == '__main__':
    unittest.main()
