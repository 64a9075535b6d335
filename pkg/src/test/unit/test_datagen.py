"""
合成數據生成單元測試

DM1 tokenized mixture、DM2 planted attention 與線性基線 margin
"""

import math
import unittest

import numpy as np

from src.main.python.core.attention import forward_single
from src.main.python.core.datagen import (
    default_planted_head, dm1_sample, dm2_sample, gamma_lin, gamma_lin_value, oracle_linear_margins,
    planted_head
)
from src.main.python.core.exceptions import RejectionRateError, ShapeMismatchError, SpecValidationError
from src.main.python.models.mixture_spec import MixtureSpec, NoiseBounds, round_half_up
from src.main.python.models.planted_spec import PlantedSpec


def reference_spec(**overrides):
    doc = dict(d=4, T=10, M=2, S=2.0, zeta=0.1, sigma=0.0, seed=7)
    doc.update(overrides)
    return MixtureSpec(**doc)


class TestMixtureSpec(unittest.TestCase):
    """DM1 配置校驗"""

    def test_round_half_up(self):
        """0.5 進位"""
        self.assertEqual(round_half_up(2.5), 3)
        self.assertEqual(round_half_up(2.4999), 2)

    def test_patterns_are_orthogonal(self):
        """μ₊、μ₋、ν_ℓ 互相正交且範數為 S"""
        spec = reference_spec()
        patterns = np.vstack([spec.mu_plus, spec.mu_minus, spec.nu])
        np.testing.assert_allclose(patterns @ patterns.T, 4.0 * np.eye(4))

    def test_dimension_too_small(self):
        """d < M + 2 時報錯"""
        with self.assertRaises(SpecValidationError):
            reference_spec(d=3)

    def test_all_tokens_relevant_rejected(self):
        """round(ζT) = T 需要顯式允許"""
        with self.assertRaises(SpecValidationError):
            reference_spec(zeta=1.0)
        self.assertEqual(reference_spec(zeta=1.0, allow_full_relevance=True).relevant_count, 10)

    def test_enforce_bounds_needs_caps(self):
        """enforce_bounds 時必須給出全部上限"""
        with self.assertRaises(SpecValidationError):
            reference_spec(sigma=0.1, enforce_bounds=True, Z_mu_cap=0.5)

    def test_fixed_mask_validated(self):
        """fixed_mask 長度必須為 round(ζT)"""
        with self.assertRaises(SpecValidationError):
            reference_spec(fixed_mask=(0, 1))

    def test_dict_round_trip_rejects_unknown_fields(self):
        """未知字段報錯"""
        doc = reference_spec().to_dict()
        self.assertEqual(MixtureSpec.from_dict(doc), reference_spec())
        doc['unknown'] = 1
        with self.assertRaises(SpecValidationError):
            MixtureSpec.from_dict(doc)

    def test_noise_bounds_radius(self):
        """R = √(S² + Z² + 2Z_ν/M)"""
        bounds = NoiseBounds.from_components(0.1, 0.2, 0.3, 2.0, 2)
        self.assertAlmostEqual(bounds.R, math.sqrt(4.0 + 0.09 + 0.2))
        self.assertAlmostEqual(bounds.Z_bar, 0.2)


class TestDm1Sample(unittest.TestCase):
    """DM1 採樣"""

    def test_zero_noise_structure(self):
        """相關 token 等於 μ_y，其餘為某個 ν_j"""
        spec = reference_spec()
        sample = dm1_sample(spec, 50)
        self.assertEqual(sample.data.n, 50)
        for i in range(50):
            X, y = sample.data.X[i], sample.data.y[i]
            mask = sample.masks[i].as_bool(spec.T)
            self.assertEqual(int(mask.sum()), 1)
            np.testing.assert_array_equal(X[mask], np.tile(spec.mu(int(y)), (1, 1)))
            for x in X[~mask]:
                self.assertTrue(any(np.array_equal(x, nu) for nu in spec.nu))

    def test_zero_noise_bounds(self):
        """零噪聲時經驗上限為零且 R = S"""
        sample = dm1_sample(reference_spec(), 20)
        self.assertEqual(sample.bounds, NoiseBounds.zero(2.0))
        self.assertAlmostEqual(sample.data.R, 2.0)

    def test_same_seed_same_data(self):
        """相同種子得到相同數據，與線程數無關"""
        spec = reference_spec(sigma=0.1)
        a = dm1_sample(spec, 30)
        b = dm1_sample(spec, 30, threads=4)
        np.testing.assert_array_equal(a.data.X, b.data.X)
        np.testing.assert_array_equal(a.data.y, b.data.y)

    def test_different_seed_different_data(self):
        """不同種子得到不同數據"""
        a = dm1_sample(reference_spec(sigma=0.1), 10)
        b = dm1_sample(reference_spec(sigma=0.1, seed=8), 10)
        self.assertFalse(np.allclose(a.data.X, b.data.X))

    def test_prefix_is_stable(self):
        """較大樣本的前綴與較小樣本相同"""
        spec = reference_spec(sigma=0.2)
        np.testing.assert_array_equal(dm1_sample(spec, 5).data.X, dm1_sample(spec, 12).data.X[:5])

    def test_antithetic_pairs(self):
        """反對稱模式下相鄰樣本標籤相反且共用 mask"""
        sample = dm1_sample(reference_spec(antithetic=True), 20)
        for i in range(0, 20, 2):
            self.assertEqual(sample.data.y[i], -sample.data.y[i + 1])
            self.assertEqual(sample.masks[i], sample.masks[i + 1])
        self.assertEqual(sample.data.label_mean(), 0.0)

    def test_fixed_mask(self):
        """固定 mask 時所有樣本的相關位置相同"""
        sample = dm1_sample(reference_spec(zeta=0.2, fixed_mask=(7, 3)), 10)
        self.assertTrue(all(m.relevant == (3, 7) for m in sample.masks))

    def test_enforced_caps_hold(self):
        """拒絕採樣後噪聲不超過上限"""
        spec = reference_spec(sigma=0.05, enforce_bounds=True, Z_mu_cap=0.1, Z_nu_cap=0.2, Z_cap=0.2)
        sample = dm1_sample(spec, 40)
        self.assertEqual(sample.bounds, spec.caps())
        noise = []
        for i in range(40):
            mask = sample.masks[i].as_bool(spec.T)
            for x in sample.data.X[i][~mask]:
                j = int(np.argmax(spec.nu @ x))
                noise.append(x - spec.nu[j])
        noise = np.array(noise)
        self.assertLessEqual(np.max(np.abs(noise @ spec.mu_plus)), 0.1)
        self.assertLessEqual(np.max(np.linalg.norm(noise, axis=1)), 0.2)

    def test_impossible_caps(self):
        """上限過小時拒絕採樣報錯"""
        spec = reference_spec(sigma=1.0, enforce_bounds=True, Z_mu_cap=1e-9, Z_nu_cap=1e-9, Z_cap=1e-9)
        with self.assertRaises(RejectionRateError):
            dm1_sample(spec, 1)

    def test_non_positive_n(self):
        """n < 1 報錯"""
        with self.assertRaises(ValueError):
            dm1_sample(reference_spec(), 0)


class TestDm2Sample(unittest.TestCase):
    """DM2 採樣"""

    def test_labels_agree_with_planted_head(self):
        """每個樣本 |Φ| > margin_floor 且 yΦ > 0"""
        spec = PlantedSpec(d=4, T=5, margin_floor=0.05, seed=3)
        data = dm2_sample(spec, 40)
        head = planted_head(spec)
        self.assertEqual(data.n, 40)
        for i in range(40):
            logit = forward_single(data.X[i], head)
            self.assertGreater(abs(logit), 0.05)
            self.assertGreater(data.y[i] * logit, 0.0)

    def test_deterministic(self):
        """相同種子得到相同數據"""
        spec = PlantedSpec(d=3, T=4, seed=9)
        np.testing.assert_array_equal(dm2_sample(spec, 10).X, dm2_sample(spec, 10).X)

    def test_rejection_rate_exceeded(self):
        """拒絕率過高時報錯"""
        spec = PlantedSpec(d=3, T=4, margin_floor=1e6, window=10, max_rejection=0.5)
        with self.assertRaises(RejectionRateError):
            dm2_sample(spec, 1)

    def test_custom_planted_head(self):
        """自定義 U*、W* 優先於缺省頭"""
        U = np.ones((4, 3))
        spec = PlantedSpec(d=3, T=4, U_star=U, W_star=np.eye(3))
        head = planted_head(spec)
        np.testing.assert_array_equal(head.U, U)
        np.testing.assert_array_equal(head.W, np.eye(3))

    def test_wrong_planted_shape(self):
        """W* 形狀錯誤時報錯"""
        with self.assertRaises(ShapeMismatchError):
            PlantedSpec(d=3, T=4, W_star=np.eye(2))

    def test_low_dimension_default_head(self):
        """d < 3 時缺省頭為平均池化"""
        head = default_planted_head(2, 5)
        np.testing.assert_array_equal(head.W, np.zeros((2, 2)))
        self.assertAlmostEqual(np.linalg.norm(head.U), 1.0)


class TestLinearMargin(unittest.TestCase):
    """線性基線"""

    def test_zero_noise_value(self):
        """S=2, T=10, ζ=0.1 時 γ_lin = 2√5·0.1"""
        self.assertAlmostEqual(gamma_lin_value(2.0, 10, 0.1, 0.0), 2.0 * math.sqrt(5.0) * 0.1)

    def test_oracle_margin_matches_formula_without_noise(self):
        """零噪聲時每個樣本的 oracle margin 都等於公式值"""
        spec = reference_spec()
        sample = dm1_sample(spec, 30)
        np.testing.assert_allclose(oracle_linear_margins(sample.data, spec), np.full(30, 0.2 * math.sqrt(5.0)))
        report = gamma_lin(spec, sample.bounds, sample.data)
        self.assertAlmostEqual(report.empirical_min, report.formula)

    def test_formula_is_a_lower_bound_with_noise(self):
        """有噪聲時經驗最小值不低於公式值"""
        spec = reference_spec(sigma=0.05)
        sample = dm1_sample(spec, 50)
        report = gamma_lin(spec, sample.bounds, sample.data)
        self.assertGreaterEqual(report.empirical_min, report.formula - 1e-12)
        self.assertIsNone(gamma_lin(spec, sample.bounds).empirical_min)


if __name__ == '__main__':
    unittest.main()
