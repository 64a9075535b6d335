"""
線性代數基礎單元測試

softmax、Jacobian、範數族、對稱特徵值與隨機數流
"""

import unittest

import numpy as np

from src.main.python.core.exceptions import DimensionError, SizeLimitError
from src.main.python.core.linalg import (
    jacobian_from_probs, make_rng, norms, power_iteration, softmax, softmax_jacobian,
    spectral_abs, sym_eig_extremes, two_inf_norm
)


class TestSoftmax(unittest.TestCase):
    """softmax 與其 Jacobian"""

    def test_uniform_on_constant_input(self):
        """常數輸入得到均勻分佈"""
        np.testing.assert_allclose(softmax(np.full(4, 3.0)), np.full(4, 0.25))

    def test_shift_invariance(self):
        """加常數不改變結果"""
        b = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(softmax(b), softmax(b + 100.0), atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        """大 logit 不溢出"""
        p = softmax(np.array([1000.0, 0.0, -1000.0]))
        self.assertTrue(np.all(np.isfinite(p)))
        self.assertAlmostEqual(p[0], 1.0)

    def test_batched_rows_sum_to_one(self):
        """批量輸入逐行歸一"""
        b = make_rng(1).normal(size=(5, 3, 7))
        np.testing.assert_allclose(np.sum(softmax(b), axis=-1), np.ones((5, 3)))

    def test_empty_vector_rejected(self):
        """空向量報錯"""
        with self.assertRaises(DimensionError):
            softmax(np.zeros(0))

    def test_jacobian_matches_finite_differences(self):
        """Jacobian 與中心差分一致"""
        b = np.array([0.1, -0.4, 0.7, 0.2])
        h = 1e-6
        numeric = np.stack([(softmax(b + h * e) - softmax(b - h * e)) / (2 * h) for e in np.eye(4)], axis=1)
        np.testing.assert_allclose(softmax_jacobian(b), numeric, atol=1e-9)

    def test_jacobian_is_symmetric_with_zero_row_sums(self):
        """diag(p) − ppᵀ 對稱且行和為零"""
        jac = jacobian_from_probs(np.array([0.2, 0.3, 0.5]))
        np.testing.assert_allclose(jac, jac.T)
        np.testing.assert_allclose(jac.sum(axis=1), np.zeros(3), atol=1e-15)


class TestNorms(unittest.TestCase):
    """範數族"""

    def test_norm_family_on_known_matrix(self):
        """已知矩陣上的各範數"""
        A = np.array([[3.0, 0.0], [0.0, -4.0], [0.0, 0.0]])
        report = norms(A)
        self.assertAlmostEqual(report.frobenius, 5.0)
        self.assertAlmostEqual(report.spectral, 4.0, places=8)
        self.assertAlmostEqual(report.two_inf, 4.0)
        self.assertAlmostEqual(report.one_inf, 4.0)
        self.assertAlmostEqual(report.one_two, 4.0)
        self.assertTrue(report.spectral_converged)

    def test_spectral_matches_svd(self):
        """譜範數與 SVD 一致"""
        A = make_rng(7).normal(size=(6, 4))
        self.assertAlmostEqual(norms(A).spectral, np.linalg.svd(A, compute_uv=False)[0], places=6)

    def test_norm_ordering(self):
        """‖A‖_{2,∞} ≤ ‖A‖₂ ≤ ‖A‖_F"""
        A = make_rng(3).normal(size=(5, 5))
        report = norms(A)
        self.assertLessEqual(report.two_inf, report.spectral + 1e-9)
        self.assertLessEqual(report.spectral, report.frobenius + 1e-9)

    def test_scaled(self):
        """縮放按 |c| 作用"""
        report = norms(np.eye(2)).scaled(-3.0)
        self.assertAlmostEqual(report.frobenius, 3.0 * np.sqrt(2.0))

    def test_two_inf_norm_on_rows(self):
        """最大行範數"""
        self.assertAlmostEqual(two_inf_norm(np.array([[3.0, 4.0], [1.0, 0.0]])), 5.0)

    def test_empty_matrix_rejected(self):
        """空矩陣報錯"""
        with self.assertRaises(DimensionError):
            norms(np.zeros((0, 3)))


class TestEigen(unittest.TestCase):
    """對稱特徵值與冪迭代"""

    def test_extremes_of_diagonal(self):
        """對角矩陣的極端特徵值"""
        ext = sym_eig_extremes(np.diag([-2.0, 0.5, 3.0]))
        self.assertAlmostEqual(ext.lambda_min, -2.0)
        self.assertAlmostEqual(ext.lambda_max, 3.0)
        self.assertLess(ext.residual, 1e-12)

    def test_asymmetric_input_is_symmetrized(self):
        """非對稱輸入先對稱化"""
        ext = sym_eig_extremes(np.array([[0.0, 2.0], [0.0, 0.0]]))
        self.assertAlmostEqual(ext.lambda_max, 1.0)
        self.assertAlmostEqual(ext.lambda_min, -1.0)

    def test_size_limit(self):
        """超過稠密上限時報錯"""
        with self.assertRaises(SizeLimitError):
            sym_eig_extremes(np.eye(4), limit=3)

    def test_non_square_rejected(self):
        """非方陣報錯"""
        with self.assertRaises(DimensionError):
            sym_eig_extremes(np.zeros((2, 3)))

    def test_spectral_abs(self):
        """λ_max(|S|)"""
        self.assertAlmostEqual(spectral_abs(np.diag([-5.0, 1.0])), 5.0)

    def test_power_iteration_dominant_eigenvalue(self):
        """冪迭代找到按模最大的特徵值"""
        S = np.diag([1.0, 2.0, 6.0])
        result = power_iteration(lambda v: S @ v, 3)
        self.assertTrue(result.converged)
        self.assertAlmostEqual(result.eigenvalue, 6.0, places=8)

    def test_power_iteration_zero_operator(self):
        """零算子返回 0"""
        result = power_iteration(lambda v: np.zeros_like(v), 4)
        self.assertEqual(result.eigenvalue, 0.0)
        self.assertTrue(result.converged)


class TestRng(unittest.TestCase):
    """可重現的隨機數流"""

    def test_same_stream_same_sequence(self):
        """相同 (seed, stream) 給出相同序列"""
        np.testing.assert_array_equal(make_rng(5, 1, 2).normal(size=10), make_rng(5, 1, 2).normal(size=10))

    def test_streams_differ(self):
        """不同 stream 給出不同序列"""
        self.assertFalse(np.allclose(make_rng(5, 1, 2).normal(size=10), make_rng(5, 1, 3).normal(size=10)))


if __name__ == '__main__':
    unittest.main()
