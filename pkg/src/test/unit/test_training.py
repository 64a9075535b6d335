"""
全批量訓練單元測試

GD 單步、第一階段、步長規則、訓練循環與定理檢查
"""

import math
import unittest

import numpy as np

from src.main.python.core.datagen import dm1_sample
from src.main.python.core.exceptions import ConfigurationError, DivergenceError
from src.main.python.core.ntk import multi_head_target, target_params_for
from src.main.python.core.objective import empirical_risk, rho, risk_gradient
from src.main.python.core.training import (
    draw_alpha, gd_step, good_init_bounds, phase_one, resolve_step_size, theorem_step_cap, train,
    trace_metrics, verify_descent, verify_theorem_bounds
)
from src.main.python.models.mixture_spec import MixtureSpec
from src.main.python.models.model_params import HeadParams, ModelParams
from src.main.python.models.train_config import TrainConfig


def small_spec(**overrides):
    doc = dict(d=4, T=4, M=2, S=1.0, zeta=0.25, sigma=0.0, seed=5)
    doc.update(overrides)
    return MixtureSpec(**doc)


class TestGdStep(unittest.TestCase):
    """單步 GD"""

    def setUp(self):
        self.data = dm1_sample(small_spec(sigma=0.1), 8).data
        self.th = ModelParams.zeros(4, 4, 2)

    def test_step_definition(self):
        """θ′ = θ − η∇L̂(θ)"""
        new = gd_step(self.data, self.th, 0.3)
        expected = self.th - risk_gradient(self.data, self.th) * 0.3
        self.assertTrue(new.allclose(expected, atol=1e-15))

    def test_zero_step_is_identity(self):
        """η = 0 時參數不變"""
        self.assertTrue(gd_step(self.data, self.th, 0.0).allclose(self.th))

    def test_negative_step_rejected(self):
        """負步長報錯"""
        with self.assertRaises(ValueError):
            gd_step(self.data, self.th, -0.1)


class TestPhaseOne(unittest.TestCase):
    """第一階段"""

    def setUp(self):
        self.spec = small_spec(sigma=0.1)
        self.data = dm1_sample(self.spec, 12).data

    def test_matches_scaled_gd_step(self):
        """α ≡ +1 時等於步長 √H 的 GD 一步"""
        result = phase_one(self.data, 3, seed=0, alpha=[1, 1, 1])
        expected = gd_step(self.data, ModelParams.zeros(4, 4, 3), math.sqrt(3))
        self.assertTrue(result.theta1.allclose(expected, atol=1e-12))

    def test_structure(self):
        """W 為零，U 每行相同且符號為 α_h"""
        result = phase_one(self.data, 4, seed=2)
        np.testing.assert_array_equal(result.theta1.W, np.zeros((4, 4, 4)))
        for h, a in enumerate(result.alpha):
            np.testing.assert_allclose(result.theta1.U[h], a * np.tile(result.common_row, (4, 1)))
        self.assertEqual(result.alpha, [int(a) for a in draw_alpha(4, 2)])

    def test_alpha_deterministic(self):
        """α 由種子決定且取值 ±1"""
        alpha = draw_alpha(50, 9)
        np.testing.assert_array_equal(alpha, draw_alpha(50, 9))
        self.assertTrue(set(alpha.tolist()) <= {-1, 1})

    def test_residual_vanishes_for_antithetic_zero_noise(self):
        """零噪聲反對稱樣本上 p = row − (ζ/4)u⋆ 恰為零"""
        spec = small_spec(antithetic=True)
        data = dm1_sample(spec, 10).data
        result = phase_one(data, 2, seed=0, spec=spec)
        self.assertAlmostEqual(result.P_empirical, 0.0, places=12)

    def test_non_zero_start_rejected(self):
        """非零初始化報錯"""
        th0 = ModelParams(np.ones((1, 4, 4)), np.zeros((1, 4, 4)))
        with self.assertRaises(ValueError):
            phase_one(self.data, 1, seed=0, th0=th0)

    def test_alpha_validation(self):
        """α 長度或取值錯誤時報錯"""
        with self.assertRaises(ValueError):
            phase_one(self.data, 2, seed=0, alpha=[1, 0])


class TestStepSize(unittest.TestCase):
    """步長規則"""

    def setUp(self):
        self.spec = small_spec()
        self.data = dm1_sample(self.spec, 8).data
        self.th0 = ModelParams.zeros(4, 4, 1, replicas=4)
        self.target = multi_head_target([1], target_params_for(self.spec), replicas=4) * 3.0

    def test_explicit(self):
        """explicit 直接使用 eta"""
        self.assertEqual(resolve_step_size(TrainConfig(K=3, eta=0.25), self.data, self.th0), 0.25)

    def test_sqrtH_scaled(self):
        """sqrtH_scaled 為 eta_base·√H"""
        config = TrainConfig(K=3, step_rule='sqrtH_scaled', eta_base=0.5)
        self.assertAlmostEqual(resolve_step_size(config, self.data, self.th0), 1.0)

    def test_auto_theorem_needs_target(self):
        """auto_theorem 沒有目標時報錯"""
        with self.assertRaises(ConfigurationError):
            resolve_step_size(TrainConfig(K=3, step_rule='auto_theorem'), self.data, self.th0)

    def test_theorem_cap_terms(self):
        """上限不超過 1、1/ρ 與兩個距離項"""
        cap = theorem_step_cap(self.data, self.th0, self.target, 5)
        dist_sq = (self.target - self.th0).norm() ** 2
        self.assertLessEqual(cap, 1.0)
        self.assertLessEqual(cap, 1.0 / rho(self.target, self.th0, max(self.data.R, 1.0)))
        self.assertLessEqual(cap, dist_sq / (5 * empirical_risk(self.data, self.target)) * (1 + 1e-12))
        self.assertLessEqual(cap, dist_sq / empirical_risk(self.data, self.th0) * (1 + 1e-12))
        config = TrainConfig(K=5, step_rule='auto_theorem')
        self.assertEqual(resolve_step_size(config, self.data, self.th0, self.target), cap)

    def test_target_at_initialization(self):
        """目標等於初始化時只保留前兩項"""
        self.assertEqual(theorem_step_cap(self.data, self.th0, self.th0, 5),
                         min(1.0, 1.0 / rho(self.th0, self.th0, max(self.data.R, 1.0))))


class TestTrain(unittest.TestCase):
    """訓練循環"""

    def setUp(self):
        self.spec = small_spec(sigma=0.1)
        sample = dm1_sample(self.spec, 10)
        self.data, self.masks = sample.data, sample.masks
        self.th0 = ModelParams.zeros(4, 4, 1, replicas=3)

    def test_matches_manual_gd(self):
        """GD 軌跡與手動迭代一致"""
        trace = train(self.data, self.th0, TrainConfig(K=4, eta=0.5))
        th = self.th0
        for k in range(4):
            self.assertAlmostEqual(trace.losses[k], empirical_risk(self.data, th), places=14)
            th = gd_step(self.data, th, 0.5)
        self.assertTrue(trace.final.allclose(th, atol=1e-14))
        self.assertEqual(trace.K, 4)

    def test_tied_replicas_match_expanded_model(self):
        """綁定副本與展開模型的 GD 終點相同"""
        config = TrainConfig(K=3, eta=0.5)
        tied = train(self.data, self.th0, config).final
        expanded = train(self.data, self.th0.expand(), config).final
        self.assertTrue(tied.expand().allclose(expanded, atol=1e-12))

    def test_zero_iterations(self):
        """K = 0 時只記錄初始點"""
        trace = train(self.data, self.th0, TrainConfig(K=0, eta=0.5))
        self.assertEqual(trace.iters, [0])
        self.assertTrue(trace.final.allclose(self.th0))

    def test_record_every(self):
        """按 record_every 抽樣並總是記錄最後一步"""
        trace = train(self.data, self.th0, TrainConfig(K=5, eta=0.5, record_every=2, keep_params=True))
        self.assertEqual(trace.iters, [0, 2, 4, 5])
        self.assertEqual(len(trace.params), 4)
        self.assertEqual(len(trace.losses), 6)

    def test_metrics_columns(self):
        """給出 masks、測試集與參考頭時所有指標都有值"""
        planted = target_params_for(self.spec).theta_opt
        trace = train(self.data, self.th0, TrainConfig(K=2, eta=0.5), eval_data=self.data, masks=self.masks,
                      planted=planted)
        row = trace.rows[-1]
        self.assertAlmostEqual(row.test_loss, row.train_loss)
        self.assertIsNotNone(row.attn_rel_mass)
        self.assertIsNotNone(row.align_U)
        self.assertIsNone(trace.rows[0].align_U)
        self.assertAlmostEqual(trace.rows[0].attn_rel_mass, 0.25)

    def test_alignment_is_cosine(self):
        """參數為參考頭的正倍數時對齊為 1"""
        head = HeadParams(U=np.ones((4, 4)), W=np.eye(4))
        th = ModelParams.tied(HeadParams(U=2.0 * head.U, W=3.0 * head.W), 5)
        metrics = trace_metrics(th, self.data, planted=head)
        self.assertAlmostEqual(metrics['align_U'], 1.0)
        self.assertAlmostEqual(metrics['align_W'], 1.0)
        self.assertIsNone(metrics['attn_rel_mass'])

    def test_divergence(self):
        """損失超過閾值時報錯並附帶軌跡"""
        with self.assertRaises(DivergenceError) as ctx:
            train(self.data, self.th0, TrainConfig(K=3, eta=0.5, divergence_loss=1e-3))
        self.assertTrue(ctx.exception.trace.diverged)

    def test_other_optimizers_reduce_loss(self):
        """動量與 Adam 都降低訓練損失"""
        for name in ('gd_momentum', 'adam'):
            trace = train(self.data, self.th0, TrainConfig(K=10, optimizer=name, eta=0.05))
            self.assertLess(trace.losses[-1], trace.losses[0])


class TestTheoremChecks(unittest.TestCase):
    """下降與訓練損失定理檢查"""

    def setUp(self):
        self.spec = small_spec(sigma=0.1)
        self.data = dm1_sample(self.spec, 10).data
        self.th0 = ModelParams.zeros(4, 4, 1, replicas=4)

    def test_descent_holds_for_small_steps(self):
        """小步長時每步都滿足下降不等式"""
        trace = train(self.data, self.th0, TrainConfig(K=10, eta=1e-3))
        report = verify_descent(trace)
        self.assertTrue(report.holds)
        self.assertEqual(report.checked + report.skipped, 10)
        self.assertGreater(report.checked, 0)

    def test_large_steps_are_skipped(self):
        """η > 1/ρ_k 的步不做檢查"""
        trace = train(self.data, self.th0, TrainConfig(K=2, eta=1e3, divergence_loss=1e300))
        report = verify_descent(trace)
        self.assertEqual(report.skipped, 2)
        self.assertEqual(report.checked, 0)

    def test_descent_needs_gd(self):
        """非 GD 軌跡報錯"""
        trace = train(self.data, self.th0, TrainConfig(K=2, optimizer='adam', eta=0.01))
        with self.assertRaises(ConfigurationError):
            verify_descent(trace)

    def test_theorem_report(self):
        """定理步長下平均損失界成立，距離界按 ‖θ−θ₀‖ 計算"""
        target = multi_head_target([1], target_params_for(self.spec), replicas=4) * 2.0
        config = TrainConfig(K=5, step_rule='auto_theorem')
        trace = train(self.data, self.th0, config, th_target=target)
        report = verify_theorem_bounds(trace, target, self.data)
        dist = (target - self.th0).norm()
        self.assertAlmostEqual(report.final_dist_bound, 4.0 * dist)
        self.assertAlmostEqual(report.iterate_dist_bound, 3.0 * dist)
        self.assertAlmostEqual(report.avg_loss, float(np.mean(trace.losses[1:])))
        self.assertTrue(report.avg_holds)
        self.assertEqual(len(trace.target_dists), 6)
        self.assertIn('holds', report.to_dict())

    def test_theorem_needs_a_step(self):
        """K = 0 時報錯"""
        trace = train(self.data, self.th0, TrainConfig(K=0, eta=0.1))
        with self.assertRaises(ValueError):
            verify_theorem_bounds(trace, self.th0, self.data)


class TestGoodInitBounds(unittest.TestCase):
    """良好初始化推論"""

    def test_default_eta_is_cap(self):
        """省略 eta 時使用上限，g₀ = (2B_Φ + log K)/γ"""
        bounds = good_init_bounds(B2=1.0, B_phi=0.5, gamma=0.4, K=100, n=50, d=4, T=10, R=2.0, H=1000)
        self.assertAlmostEqual(bounds.g0, (1.0 + math.log(100)) / 0.4)
        self.assertLessEqual(bounds.eta_cap, 1.0 / bounds.rho)
        expected = 2.0 / 100 + 5.0 * (1.0 + math.log(100)) ** 2 / (4.0 * 0.16 * bounds.eta_cap * 100)
        self.assertAlmostEqual(bounds.train_bound, expected)

    def test_generalization_bound_shrinks_with_n(self):
        """泛化界隨 n 以 1/n 下降"""
        small = good_init_bounds(1.0, 0.5, 0.4, 100, 50, 4, 10, 2.0, 1000, eta=0.01)
        large = good_init_bounds(1.0, 0.5, 0.4, 100, 500, 4, 10, 2.0, 1000, eta=0.01)
        self.assertAlmostEqual(small.gen_bound / large.gen_bound, 10.0)

    def test_invalid_arguments(self):
        """K < 1 或 γ ≤ 0 報錯"""
        with self.assertRaises(ValueError):
            good_init_bounds(1.0, 0.5, 0.4, 0, 50, 4, 10, 2.0, 1000)
        with self.assertRaises(ValueError):
            good_init_bounds(1.0, 0.5, 0.0, 10, 50, 4, 10, 2.0, 1000)


if __name__ == '__main__':
    unittest.main()
