"""
Logistic 經驗風險及其導數

- L̂(θ̃) = (1/n) Σ log(1 + exp(−y_i Φ̃(X_i; θ̃)))
- 梯度、Hessian-向量積與稠密 Hessian
- β₁ / β₂ / β₃ / κ / ρ 常數
- GLQC 線段檢查
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.special import expit

from src.main.python.core.attention import model_outputs
from src.main.python.core.calculus import (
    DENSE_LIMIT, GradCheckReport, fd_gradient, hess_assemble, head_hvp_batch, per_sample_head_gradients,
    relative_error, weighted_head_gradients
)
from src.main.python.core.exceptions import (
    ShapeMismatchError, create_size_limit_error, handle_numeric_errors
)
from src.main.python.core.linalg import PowerIterationResult, power_iteration
from src.main.python.models.loss_report import BetaConstants, GlqcReport, LossBounds, LossReport
from src.main.python.models.model_params import ModelParams
from src.main.python.models.token_data import Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LogisticValues:
    loss: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


@dataclass(frozen=True)
class HessianExtremes:
    lambda_min: float
    lambda_max: float
    converged: bool


def logistic(t) -> LogisticValues:
    """
    ℓ(t) = log(1 + e^{−t})，ℓ′(t) = −1/(1 + e^t)，ℓ″(t) = e^t/(1 + e^t)²

    大 |t| 時分支計算以保持精度。
    """
    t = np.asarray(t, dtype=np.float64)
    loss = np.where(t > 0, np.log1p(np.exp(-np.abs(t))), -t + np.log1p(np.exp(-np.abs(t))))
    sig = expit(t)
    return LogisticValues(loss=loss, d1=-expit(-t), d2=sig * (1.0 - sig))


def _check_compatible(data: Dataset, th: ModelParams):
    if (data.T, data.d) != (th.T, th.d):
        raise ShapeMismatchError(
            f"Data shape (T={data.T}, d={data.d}) does not match parameters (T={th.T}, d={th.d})",
            details={'data': [data.T, data.d], 'params': [th.T, th.d]}
        )


def margins(data: Dataset, th: ModelParams) -> np.ndarray:
    """y_i Φ̃(X_i; θ̃)"""
    _check_compatible(data, th)
    return data.y * model_outputs(data.X, th)


def per_sample_losses(data: Dataset, th: ModelParams) -> np.ndarray:
    return logistic(margins(data, th)).loss


def empirical_risk(data: Dataset, th: ModelParams, normalizer: Optional[int] = None) -> float:
    """
    (1/n) Σ ℓ(y_i Φ̃_i)

    normalizer 用於留一法：去掉一個樣本後仍以原始 n 歸一化。
    """
    n = normalizer or data.n
    return float(np.sum(per_sample_losses(data, th)) / n)


@handle_numeric_errors
def risk_gradient(data: Dataset, th: ModelParams, normalizer: Optional[int] = None) -> ModelParams:
    """(1/n) Σ y_i ℓ′(y_i Φ̃_i) ∇Φ̃_i，形狀與 th 相同"""
    n = normalizer or data.n
    lv = logistic(margins(data, th))
    weights = data.y * lv.d1 / n
    return weighted_head_gradients(data.X, th, weights) * (1.0 / np.sqrt(th.H))


def risk_and_gradient(data: Dataset, th: ModelParams, normalizer: Optional[int] = None):
    """同時返回 L̂ 與 ∇L̂，共享一次前向計算"""
    n = normalizer or data.n
    lv = logistic(margins(data, th))
    grad = weighted_head_gradients(data.X, th, data.y * lv.d1 / n) * (1.0 / np.sqrt(th.H))
    return float(np.sum(lv.loss) / n), grad


def risk_gradient_check(data: Dataset, th: ModelParams, h: float = 1e-5) -> float:
    """∇L̂ 的解析值與中心差分之相對誤差"""
    full = th.expand()
    T, d, H = full.T, full.d, full.H

    def f(vec):
        return empirical_risk(data, ModelParams.unflatten(vec, T, d, H))

    analytic = risk_gradient(data, full).flatten()
    return relative_error(analytic, fd_gradient(f, full.flatten(), h))


def risk_gradcheck(rng: np.random.Generator, instances: int = 200, max_T: int = 6, max_d: int = 5,
                   max_H: int = 3, max_n: int = 4, h: float = 1e-5, tol: float = 1e-6) -> GradCheckReport:
    """
    隨機實例上的風險梯度校驗

    token 與參數服從 Unif[−1, 1]，n ≤ max_n，標籤等概率取 ±1。
    """
    worst = 0.0
    failures = 0
    for _ in range(instances):
        T = int(rng.integers(1, max_T + 1))
        d = int(rng.integers(1, max_d + 1))
        H = int(rng.integers(1, max_H + 1))
        n = int(rng.integers(1, max_n + 1))
        data = Dataset(X=rng.uniform(-1.0, 1.0, size=(n, T, d)), y=rng.choice([-1.0, 1.0], size=n))
        th = ModelParams(rng.uniform(-1.0, 1.0, size=(H, T, d)), rng.uniform(-1.0, 1.0, size=(H, d, d)))
        err = risk_gradient_check(data, th, h)
        worst = max(worst, err)
        if err > tol:
            failures += 1
            log.debug(f"Risk gradient check failure: n={n} T={T} d={d} H={H} rel_err={err:.3e}")
    log.info(f"Risk gradient check over {instances} instances: max rel err {worst:.3e}, failures {failures}")
    return GradCheckReport(max_rel_err=worst, instances=instances, failures=failures, tolerance=tol)


@handle_numeric_errors
def risk_hvp(data: Dataset, th: ModelParams, v: ModelParams, normalizer: Optional[int] = None) -> ModelParams:
    """
    ∇²L̂(θ̃)[v] = (1/n) Σ [ℓ″ (∇Φ̃_iᵀv) ∇Φ̃_i + ℓ′ y_i ∇²Φ̃_i v]
    """
    _check_compatible(data, th)
    th.check_compatible(v)
    n = normalizer or data.n
    scale = 1.0 / np.sqrt(th.H)
    lv = logistic(margins(data, th))
    dU, dW = per_sample_head_gradients(data.X, th)
    inner = th.replicas * scale * (np.einsum('nhtd,htd->n', dU, v.U) + np.einsum('nhij,hij->n', dW, v.W))
    gauss_newton = weighted_head_gradients(data.X, th, lv.d2 * inner / n) * scale
    curvature = head_hvp_batch(data.X, th, v, lv.d1 * data.y / n) * scale
    return gauss_newton + curvature


@handle_numeric_errors
def risk_hessian_dense(data: Dataset, th: ModelParams, limit: int = DENSE_LIMIT) -> np.ndarray:
    """
    稠密 ∇²L̂，參數按 flatten 順序排列

    只支持 replicas = 1 且 H(Td+d²) ≤ limit。
    """
    _check_compatible(data, th)
    full = th.expand()
    dim = full.H * full.head_dim
    if dim > limit:
        raise create_size_limit_error(dim, limit, "use risk_hvp or hessian_extremes_hvp instead")
    n = data.n
    scale = 1.0 / np.sqrt(full.H)
    lv = logistic(margins(data, full))
    dU, dW = per_sample_head_gradients(data.X, full)
    hess = np.zeros((dim, dim))
    for i in range(n):
        g = scale * np.concatenate([dU[i].reshape(full.H, -1), dW[i].reshape(full.H, -1)], axis=1).ravel()
        blocks = [hess_assemble(data.X[i], head, limit).matrix for head in full.heads]
        hess += (lv.d2[i] * np.outer(g, g) + lv.d1[i] * data.y[i] * scale * scipy.linalg.block_diag(*blocks)) / n
    return 0.5 * (hess + hess.T)


def hessian_extremes_hvp(data: Dataset, th: ModelParams, tol: float = 1e-8,
                         max_iter: int = 10000) -> HessianExtremes:
    """
    基於 HVP 的冪迭代估計 ∇²L̂ 的最大與最小特徵值

    先求按模最大的特徵值，再對平移後的算子求另一端。
    """
    T, d, Hs, reps = th.T, th.d, th.stored_heads, th.replicas
    weight = np.sqrt(reps)

    def matvec(vec: np.ndarray) -> np.ndarray:
        # 以 √replicas 加權使存儲頭坐標下的算子對稱
        v = ModelParams.unflatten(vec / weight, T, d, Hs, reps)
        return risk_hvp(data, th, v).flatten() * weight

    dim = Hs * th.head_dim
    first: PowerIterationResult = power_iteration(matvec, dim, tol=tol, max_iter=max_iter)
    shift = first.eigenvalue
    second = power_iteration(lambda x: matvec(x) - shift * x, dim, tol=tol, max_iter=max_iter)
    other = second.eigenvalue + shift
    lo, hi = sorted((first.eigenvalue, other))
    return HessianExtremes(lambda_min=lo, lambda_max=hi, converged=first.converged and second.converged)


# ---------------------------------------------------------------------------
# 常數
# ---------------------------------------------------------------------------

def beta_constants(R: float, T: int, d: int, H: int, norm: float) -> BetaConstants:
    """
    β₁ = √T R(2R²·norm + 1)
    β₃ = 2d√(Td) R³(3√d R²·norm + 1)
    β₂ = β₃/√H + β₁²/4，κ = β₃/√H
    """
    beta1 = np.sqrt(T) * R * (2.0 * R ** 2 * norm + 1.0)
    beta3 = 2.0 * d * np.sqrt(T * d) * R ** 3 * (3.0 * np.sqrt(d) * R ** 2 * norm + 1.0)
    kappa = beta3 / np.sqrt(H)
    return BetaConstants(beta1=float(beta1), beta2=float(kappa + beta1 ** 2 / 4.0),
                         beta3=float(beta3), kappa=float(kappa))


def loss_bounds(data_R: float, th: ModelParams) -> LossBounds:
    """
    同時返回 loose（‖θ̃‖_{2,∞}）與 tight（max_h ‖U_h‖_F）兩組常數

    R < 1 時以 max(R, 1) 計算並帶警告標記（相關定理假設 R ≥ 1）。
    """
    warning = data_R < 1.0
    if warning:
        log.warning(f"Token norm bound R={data_R:.4g} < 1; constants computed with R=1")
    R = max(data_R, 1.0)
    loose = beta_constants(R, th.T, th.d, th.H, th.max_head_norm())
    tight = beta_constants(R, th.T, th.d, th.H, th.max_U_frobenius())
    return LossBounds(loose=loose, tight=tight, R=data_R, R_warning=warning)


def alpha_coefficient(th: ModelParams, th0: ModelParams, R: float) -> float:
    """α(θ) = 3d√d R²[3√T R³(3‖θ−θ₀‖ + ‖θ‖_{2,∞}) + 2√T R]"""
    T, d = th.T, th.d
    dist = (th - th0).norm()
    return float(3.0 * d * np.sqrt(d) * R ** 2
                 * (3.0 * np.sqrt(T) * R ** 3 * (3.0 * dist + th.max_head_norm()) + 2.0 * np.sqrt(T) * R))


def rho(th_target: ModelParams, th0: ModelParams, R: float) -> float:
    """ρ(θ) = (2d√(Td)R³/√H + TR²/4)·α(θ)²"""
    T, d, H = th_target.T, th_target.d, th_target.H
    alpha = alpha_coefficient(th_target, th0, R)
    return float((2.0 * d * np.sqrt(T * d) * R ** 3 / np.sqrt(H) + T * R ** 2 / 4.0) * alpha ** 2)


def loss_report(data: Dataset, th: ModelParams, th0: Optional[ModelParams] = None,
                R: Optional[float] = None) -> LossReport:
    """在 θ 處匯總損失值、梯度範數與全部常數"""
    R = data.R if R is None else R
    value, grad = risk_and_gradient(data, th)
    bounds = loss_bounds(R, th)
    return LossReport(
        value=value,
        grad_norm=grad.norm(),
        beta1=bounds.loose.beta1,
        beta2=bounds.loose.beta2,
        beta3=bounds.loose.beta3,
        kappa=bounds.loose.kappa,
        rho=rho(th, th0, max(R, 1.0)) if th0 is not None else None,
        beta1_tight=bounds.tight.beta1,
        beta2_tight=bounds.tight.beta2,
        beta3_tight=bounds.tight.beta3,
        kappa_tight=bounds.tight.kappa,
        R=R,
        R_warning=bounds.R_warning,
    )


def segment_losses(data: Dataset, th1: ModelParams, th2: ModelParams, grid: int = 101) -> np.ndarray:
    """L̂ 沿 [θ₁, θ₂] 上 grid 個等距點（含端點）"""
    alphas = np.linspace(0.0, 1.0, grid)
    return np.array([empirical_risk(data, th1 * (1.0 - a) + th2 * a) for a in alphas])


def glqc_check(data: Dataset, th1: ModelParams, th2: ModelParams, grid: int = 101,
               R: Optional[float] = None) -> GlqcReport:
    """
    檢查 2(β₃(θ₁)∨β₃(θ₂))‖θ₁−θ₂‖² ≤ √H 以及線段最大值 ≤ (4/3)(L̂(θ₁)∨L̂(θ₂))
    """
    if grid < 3:
        raise ValueError(f"GLQC grid must have at least 3 points, got {grid}")
    th1.check_compatible(th2)
    R = data.R if R is None else R
    beta3 = max(loss_bounds(R, th1).loose.beta3, loss_bounds(R, th2).loose.beta3)
    dist = (th1 - th2).norm()
    condition = 2.0 * beta3 * dist ** 2 <= np.sqrt(th1.H)
    losses = segment_losses(data, th1, th2, grid)
    endpoint = max(losses[0], losses[-1])
    seg = float(np.max(losses))
    return GlqcReport(
        condition_holds=bool(condition),
        segment_max=seg,
        endpoint_max=float(endpoint),
        ratio=float(seg / endpoint) if endpoint > 0 else 1.0,
        distance=dist,
        beta3_max=beta3,
        H=th1.H,
        losses=losses.tolist(),
    )
