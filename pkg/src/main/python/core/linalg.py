"""
稠密線性代數基礎

softmax 及其 Jacobian、範數族、對稱特徵值與可重現的隨機數流。
所有函數皆為純函數，輸入不被修改。
"""

import logging
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
import scipy.linalg

from src.main.python.core.exceptions import (
    DimensionError, create_size_limit_error, handle_numeric_errors
)

log = logging.getLogger(__name__)

EIG_DENSE_LIMIT = 2000
POWER_ITER_SEED = 20240531


@dataclass(frozen=True)
class NormReport:
    """矩陣範數族"""
    frobenius: float
    spectral: float
    two_inf: float
    one_inf: float
    one_two: float
    spectral_converged: bool = True
    spectral_iterations: int = 0

    def scaled(self, c: float) -> 'NormReport':
        c = abs(c)
        return NormReport(self.frobenius * c, self.spectral * c, self.two_inf * c,
                          self.one_inf * c, self.one_two * c,
                          self.spectral_converged, self.spectral_iterations)


@dataclass(frozen=True)
class PowerIterationResult:
    eigenvalue: float
    vector: np.ndarray
    converged: bool
    iterations: int


@dataclass(frozen=True)
class EigExtremes:
    lambda_min: float
    lambda_max: float
    residual: float


def softmax(b: np.ndarray) -> np.ndarray:
    """
    沿最後一軸的 softmax，使用減去最大值避免溢出

    Raises:
        DimensionError: 空向量
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 0 or b.shape[-1] == 0:
        raise DimensionError("softmax of an empty vector")
    shifted = b - np.max(b, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_jacobian(b: np.ndarray) -> np.ndarray:
    """φ′(b) = diag(φ(b)) − φ(b)φ(b)ᵀ，支持批量輸入（最後一軸為 T）"""
    return jacobian_from_probs(softmax(b))


def jacobian_from_probs(p: np.ndarray) -> np.ndarray:
    """由概率向量 p 構造 diag(p) − ppᵀ"""
    jac = -p[..., :, None] * p[..., None, :]
    idx = np.arange(p.shape[-1])
    jac[..., idx, idx] += p
    return jac


def power_iteration(matvec: Callable[[np.ndarray], np.ndarray], dim: int,
                    tol: float = 1e-10, max_iter: int = 10000,
                    seed: int = POWER_ITER_SEED) -> PowerIterationResult:
    """
    對稱算子的主特徵對（按模最大）

    停止條件為殘差 ‖Av − λv‖ ≤ tol·max(|λ|, 1)。
    """
    rng = np.random.default_rng(seed)
    x = rng.normal(size=dim)
    x /= np.linalg.norm(x)

    lam = 0.0
    for k in range(1, max_iter + 1):
        y = matvec(x)
        y_norm = np.linalg.norm(y)
        if y_norm == 0.0:
            # x 落在零空間：算子在此方向為零
            return PowerIterationResult(0.0, x, True, k)
        lam = float(x @ y)
        x = y / y_norm
        res = np.linalg.norm(matvec(x) - lam * x)
        if res <= tol * max(abs(lam), 1.0):
            return PowerIterationResult(lam, x, True, k)

    log.warning(f"Power iteration did not converge in {max_iter} iterations, best estimate {lam:.6g}")
    return PowerIterationResult(lam, x, False, max_iter)


def spectral_norm(A: np.ndarray, tol: float = 1e-10, max_iter: int = 10000) -> Tuple[float, bool, int]:
    A = np.asarray(A, dtype=np.float64)
    result = power_iteration(lambda v: A.T @ (A @ v), A.shape[1], tol=tol, max_iter=max_iter)
    return float(np.sqrt(max(result.eigenvalue, 0.0))), result.converged, result.iterations


def norms(A: np.ndarray, tol: float = 1e-10, max_iter: int = 10000) -> NormReport:
    """
    計算 ‖A‖_F, ‖A‖₂, ‖A‖_{2,∞}, ‖A‖_{1,∞}, ‖A‖_{1,2}

    two_inf 為最大行 2-範數，one_inf 為最大絕對元素，one_two 為最大列 2-範數。
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.size == 0:
        raise DimensionError(f"norms needs a nonempty matrix, got shape {A.shape}")
    spectral, converged, iterations = spectral_norm(A, tol=tol, max_iter=max_iter)
    return NormReport(
        frobenius=float(np.linalg.norm(A)),
        spectral=spectral,
        two_inf=float(np.max(np.linalg.norm(A, axis=1))),
        one_inf=float(np.max(np.abs(A))),
        one_two=float(np.max(np.linalg.norm(A, axis=0))),
        spectral_converged=converged,
        spectral_iterations=iterations,
    )


def two_inf_norm(A: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(A, axis=-1)))


def one_inf_norm(A: np.ndarray) -> float:
    return float(np.max(np.abs(A)))


@handle_numeric_errors
def sym_eig_extremes(S: np.ndarray, limit: int = EIG_DENSE_LIMIT) -> EigExtremes:
    """
    稠密對稱特徵分解的最小與最大特徵值

    輸入先對稱化為 (S+Sᵀ)/2。
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"sym_eig_extremes needs a square matrix, got shape {S.shape}")
    n = S.shape[0]
    if n > limit:
        raise create_size_limit_error(n, limit, "use objective.hessian_extremes_hvp (HVP power iteration) instead")
    sym = 0.5 * (S + S.T)
    values, vectors = scipy.linalg.eigh(sym)
    lo, hi = vectors[:, 0], vectors[:, -1]
    residual = max(np.linalg.norm(sym @ lo - values[0] * lo), np.linalg.norm(sym @ hi - values[-1] * hi))
    return EigExtremes(lambda_min=float(values[0]), lambda_max=float(values[-1]), residual=float(residual))


def spectral_abs(S: np.ndarray) -> float:
    """λ_max(|S|) = max(|λ_min|, |λ_max|)"""
    ext = sym_eig_extremes(S)
    return max(abs(ext.lambda_min), abs(ext.lambda_max))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    基於計數器的 Philox 隨機數發生器

    stream 為附加的整數標籤（例如樣本索引），同一 (seed, stream) 總是給出相同的序列。
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *[int(s) for s in stream]])))


