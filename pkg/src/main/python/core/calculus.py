"""
注意力模型的一階與二階精確微積分

- 梯度：∇_UΦ = softmax(XWXᵀ)X，∇_WΦ = Σ_t x_t u_tᵀXᵀφ′(XWᵀx_t)X
- Hessian 雙線性形式與稠密組裝（UU 塊恆為零）
- 模型梯度 / Hessian 範數上界
- 中心差分校驗
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import scipy.linalg

from src.main.python.core.attention import as_array, attention_matrix, check_shapes, forward_multi, Tokens
from src.main.python.core.exceptions import create_shape_mismatch_error, create_size_limit_error
from src.main.python.core.linalg import jacobian_from_probs, one_inf_norm, softmax, two_inf_norm
from src.main.python.models.model_params import HeadParams, ModelParams

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000


@dataclass(frozen=True)
class HeadGradient:
    """單頭梯度 (dU, dW)"""
    dU: np.ndarray
    dW: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.dU.ravel(), self.dW.ravel()])

    def scaled(self, c: float) -> 'HeadGradient':
        return HeadGradient(self.dU * c, self.dW * c)


@dataclass(frozen=True)
class HeadHessian:
    """單頭稠密 Hessian，塊結構 [UU, UW; WU, WW]"""
    matrix: np.ndarray
    T: int
    d: int

    @property
    def split(self) -> int:
        return self.T * self.d

    @property
    def UU(self) -> np.ndarray:
        return self.matrix[:self.split, :self.split]

    @property
    def UW(self) -> np.ndarray:
        return self.matrix[:self.split, self.split:]

    @property
    def WW(self) -> np.ndarray:
        return self.matrix[self.split:, self.split:]

    def symmetry_residual(self) -> float:
        return float(np.linalg.norm(self.matrix - self.matrix.T))


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    instances: int
    failures: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


# ---------------------------------------------------------------------------
# 批量核心
# ---------------------------------------------------------------------------

def _row_centered(A: np.ndarray, V: np.ndarray) -> np.ndarray:
    """逐行計算 φ′(a_t) v_t = a_t⊙v_t − a_t(a_tᵀv_t)"""
    AV = A * V
    return AV - A * np.sum(AV, axis=-1, keepdims=True)


def head_terms(X: np.ndarray, th: ModelParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    每個樣本、每個存儲頭的注意力矩陣 A 與 G = φ′ 作用後的行

    Returns:
        A: (n, H, T, T)，G: (n, H, T, T)，使得 ∇_WΦ = XᵀGX
    """
    logits = np.einsum('nti,hij,nsj->nhts', X, th.W, X)
    A = softmax(logits)
    V = np.einsum('htd,nsd->nhts', th.U, X)
    return A, _row_centered(A, V)


def weighted_head_gradients(X: np.ndarray, th: ModelParams, weights: np.ndarray) -> ModelParams:
    """
    Σ_i w_i ∇_{θ_h}Φ(X_i; θ_h)，對每個存儲頭（未乘 1/√H）

    返回與 th 同形狀的 ModelParams。
    """
    X = np.asarray(X, dtype=np.float64)
    check_shapes(X, th.T, th.d)
    A, G = head_terms(X, th)
    dU = np.einsum('n,nhts,nsd->htd', weights, A, X)
    dW = np.einsum('n,nti,nhts,nsj->hij', weights, X, G, X)
    return ModelParams(dU, dW, th.replicas)


def per_sample_head_gradients(X: np.ndarray, th: ModelParams) -> Tuple[np.ndarray, np.ndarray]:
    """每個樣本的每頭梯度 (n, H, T, d) 與 (n, H, d, d)，未乘 1/√H"""
    A, G = head_terms(X, th)
    dU = np.einsum('nhts,nsd->nhtd', A, X)
    dW = np.einsum('nti,nhts,nsj->nhij', X, G, X)
    return dU, dW


# ---------------------------------------------------------------------------
# 單樣本梯度
# ---------------------------------------------------------------------------

def grad_single(x: Tokens, th: HeadParams) -> HeadGradient:
    """單頭模型梯度 (∇_UΦ, ∇_WΦ)"""
    X = as_array(x)
    check_shapes(X, th.T, th.d)
    A = attention_matrix(X, th.W)
    V = th.U @ X.T
    G = _row_centered(A, V)
    return HeadGradient(dU=A @ X, dW=X.T @ G @ X)


def grad_multi(x: Tokens, th: ModelParams) -> List[HeadGradient]:
    """多頭梯度：每個存儲頭的 grad_single 乘以 1/√H"""
    X = as_array(x)
    check_shapes(X, th.T, th.d)
    scale = 1.0 / np.sqrt(th.H)
    return [grad_single(X, head).scaled(scale) for head in th.heads]


def grad_multi_params(x: Tokens, th: ModelParams) -> ModelParams:
    """grad_multi 以 ModelParams 形式返回"""
    X = as_array(x)
    grad = weighted_head_gradients(X[None], th, np.ones(1))
    return grad * (1.0 / np.sqrt(th.H))


# ---------------------------------------------------------------------------
# Hessian
# ---------------------------------------------------------------------------

def hess_bilinear_UW(x: Tokens, th: HeadParams, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """∇_W⟨a, ∇_UΦ b⟩ = Σ_t x_t a_t bᵀXᵀφ′(XWᵀx_t)X"""
    X = as_array(x)
    check_shapes(X, th.T, th.d)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (th.T,):
        raise create_shape_mismatch_error('a', (th.T,), a.shape)
    if b.shape != (th.d,):
        raise create_shape_mismatch_error('b', (th.d,), b.shape)
    A = attention_matrix(X, th.W)
    V = np.outer(a, X @ b)
    return X.T @ _row_centered(A, V) @ X


def hess_bilinear_WW(x: Tokens, th: HeadParams, c: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    ∇_W⟨c, ∇_WΦ b⟩ = Σ_t (cᵀx_t) x_t d_tᵀφ′(XWᵀx_t)X

    d_t = diag(Xb)Xu_t − Xu_t bᵀXᵀφ_t − Xb u_tᵀXᵀφ_t
    """
    X = as_array(x)
    check_shapes(X, th.T, th.d)
    c = np.asarray(c, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if c.shape != (th.d,):
        raise create_shape_mismatch_error('c', (th.d,), c.shape)
    if b.shape != (th.d,):
        raise create_shape_mismatch_error('b', (th.d,), b.shape)
    A = attention_matrix(X, th.W)
    V = th.U @ X.T                        # 第 t 行為 Xu_t
    w = X @ b
    dvec = (w[None, :] * V
            - V * (A @ w)[:, None]
            - w[None, :] * np.sum(A * V, axis=1, keepdims=True))
    G = (X @ c)[:, None] * _row_centered(A, dvec)
    return X.T @ G @ X


def _logit_hessians(A: np.ndarray, V: np.ndarray) -> np.ndarray:
    """K_t = φ′_t(diag(v_t) − v_t a_tᵀ − (a_tᵀv_t)I)，即 a_tᵀv_t 對 logits 的 Hessian"""
    T = A.shape[-1]
    jac = jacobian_from_probs(A)
    av = np.sum(A * V, axis=-1)
    inner = (V[..., :, None] * np.eye(T)
             - V[..., :, None] * A[..., None, :]
             - av[..., None, None] * np.eye(T))
    K = jac @ inner
    return 0.5 * (K + np.swapaxes(K, -1, -2))


def hess_assemble(x: Tokens, th: HeadParams, limit: int = DENSE_LIMIT) -> HeadHessian:
    """
    組裝單頭稠密 Hessian

    UW[(t,i),(j,k)] = X[t,j]·(Xᵀφ′_tX)[i,k]
    WW[(j,k),(l,m)] = Σ_t X[t,j]X[t,l]·(XᵀK_tX)[k,m]
    """
    X = as_array(x)
    check_shapes(X, th.T, th.d)
    T, d = th.T, th.d
    p = T * d + d * d
    if p > limit:
        raise create_size_limit_error(p, limit, "use objective.risk_hvp for larger models")
    A = attention_matrix(X, th.W)
    jac = jacobian_from_probs(A)                         # (T, T, T)
    M = np.einsum('si,tsr,rk->tik', X, jac, X)           # Xᵀφ′_tX
    UW = np.einsum('tj,tik->tijk', X, M).reshape(T * d, d * d)
    K = _logit_hessians(A, th.U @ X.T)
    N = np.einsum('si,tsr,rk->tik', X, K, X)             # XᵀK_tX
    WW = np.einsum('tj,tl,tkm->jklm', X, X, N).reshape(d * d, d * d)
    WW = 0.5 * (WW + WW.T)

    hess = np.zeros((p, p))
    hess[:T * d, T * d:] = UW
    hess[T * d:, :T * d] = UW.T
    hess[T * d:, T * d:] = WW
    return HeadHessian(matrix=hess, T=T, d=d)


def hess_multi_dense(x: Tokens, th: ModelParams, limit: int = DENSE_LIMIT) -> np.ndarray:
    """多頭模型 Hessian：按頭的塊對角，各塊為 HeadHessian/√H"""
    full = th.expand()
    dim = full.H * full.head_dim
    if dim > limit:
        raise create_size_limit_error(dim, limit)
    scale = 1.0 / np.sqrt(full.H)
    blocks = [hess_assemble(x, head, limit).matrix * scale for head in full.heads]
    return scipy.linalg.block_diag(*blocks)


def head_hvp_batch(X: np.ndarray, th: ModelParams, v: ModelParams, weights: np.ndarray) -> ModelParams:
    """
    Σ_i w_i ∇²Φ(X_i; θ_h)[v_h]，對每個存儲頭（未乘 1/√H）

    U 部分：(dA)X，dA_t = φ′_t(X V_Wᵀ x_t)
    W 部分：Xᵀ(G_U + G_W)X，G_U 來自 V_U，G_W = K_t dl_t
    """
    logits = np.einsum('nti,hij,nsj->nhts', X, th.W, X)
    A = softmax(logits)
    dl = np.einsum('nti,hij,nsj->nhts', X, v.W, X)
    dA = _row_centered(A, dl)
    out_U = np.einsum('n,nhts,nsd->htd', weights, dA, X)

    V_u = np.einsum('htd,nsd->nhts', v.U, X)
    G_u = _row_centered(A, V_u)
    K = _logit_hessians(A, np.einsum('htd,nsd->nhts', th.U, X))
    G_w = np.einsum('nhtsr,nhtr->nhts', K, dl)
    out_W = np.einsum('n,nti,nhts,nsj->hij', weights, X, G_u + G_w, X)
    return ModelParams(out_U, out_W, th.replicas)


# ---------------------------------------------------------------------------
# 範數上界
# ---------------------------------------------------------------------------

def model_grad_bound(x: Tokens, th: HeadParams) -> float:
    """2‖X‖²_{2,∞}Σ_t‖Xu_t‖_∞ + √T‖X‖_{2,∞}"""
    X = as_array(x)
    check_shapes(X, th.T, th.d)
    r = two_inf_norm(X)
    s = float(np.sum(np.max(np.abs(th.U @ X.T), axis=1)))
    return 2.0 * r ** 2 * s + np.sqrt(th.T) * r


def model_hess_bound(x: Tokens, th: HeadParams) -> float:
    """6d²‖X‖_{2,∞}‖X‖³_{1,∞}Σ_t‖Xu_t‖_∞ + 2d√(Td)‖X‖_{2,∞}‖X‖²_{1,∞}"""
    X = as_array(x)
    check_shapes(X, th.T, th.d)
    T, d = th.T, th.d
    r = two_inf_norm(X)
    m = one_inf_norm(X)
    s = float(np.sum(np.max(np.abs(th.U @ X.T), axis=1)))
    return 6.0 * d ** 2 * r * m ** 3 * s + 2.0 * d * np.sqrt(T * d) * r * m ** 2


# ---------------------------------------------------------------------------
# 有限差分
# ---------------------------------------------------------------------------

def fd_gradient(f: Callable[[np.ndarray], float], vec: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """中心差分梯度"""
    vec = np.asarray(vec, dtype=np.float64)
    grad = np.zeros_like(vec)
    e = np.zeros_like(vec)
    for i in range(vec.size):
        e[i] = h
        grad[i] = (f(vec + e) - f(vec - e)) / (2.0 * h)
        e[i] = 0.0
    return grad


def fd_jacobian(g: Callable[[np.ndarray], np.ndarray], vec: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """梯度的中心差分 Jacobian（即 Hessian 的數值近似）"""
    vec = np.asarray(vec, dtype=np.float64)
    cols = []
    e = np.zeros_like(vec)
    for i in range(vec.size):
        e[i] = h
        cols.append((g(vec + e) - g(vec - e)) / (2.0 * h))
        e[i] = 0.0
    return np.stack(cols, axis=1)


def fd_hessian(f: Callable[[np.ndarray], float], vec: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """二階中心差分 Hessian"""
    vec = np.asarray(vec, dtype=np.float64)
    p = vec.size
    hess = np.zeros((p, p))
    f0 = f(vec)
    eye = np.eye(p) * h
    for i in range(p):
        hess[i, i] = (f(vec + eye[i]) - 2.0 * f0 + f(vec - eye[i])) / h ** 2
        for j in range(i + 1, p):
            val = (f(vec + eye[i] + eye[j]) - f(vec + eye[i] - eye[j])
                   - f(vec - eye[i] + eye[j]) + f(vec - eye[i] - eye[j])) / (4.0 * h ** 2)
            hess[i, j] = hess[j, i] = val
    return hess


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = max(np.linalg.norm(exact), np.linalg.norm(approx), 1e-12)
    return float(np.linalg.norm(approx - exact) / denom)


def model_gradient_check(x: Tokens, th: ModelParams, h: float = 1e-5) -> float:
    """Φ̃ 的解析梯度與中心差分之相對誤差"""
    X = as_array(x)
    full = th.expand()
    T, d, H = full.T, full.d, full.H

    def f(vec):
        return forward_multi(X, ModelParams.unflatten(vec, T, d, H))

    analytic = grad_multi_params(X, full).flatten()
    return relative_error(analytic, fd_gradient(f, full.flatten(), h))


def gradcheck(rng: np.random.Generator, instances: int = 200, max_T: int = 6, max_d: int = 5,
              max_H: int = 3, h: float = 1e-5, tol: float = 1e-6) -> GradCheckReport:
    """
    隨機實例上的梯度校驗

    元素服從 Unif[−1, 1]，T ≤ max_T，d ≤ max_d，H ≤ max_H。
    """
    worst = 0.0
    failures = 0
    for _ in range(instances):
        T = int(rng.integers(1, max_T + 1))
        d = int(rng.integers(1, max_d + 1))
        H = int(rng.integers(1, max_H + 1))
        X = rng.uniform(-1.0, 1.0, size=(T, d))
        th = ModelParams(rng.uniform(-1.0, 1.0, size=(H, T, d)), rng.uniform(-1.0, 1.0, size=(H, d, d)))
        err = model_gradient_check(X, th, h)
        worst = max(worst, err)
        if err > tol:
            failures += 1
            log.debug(f"Gradient check failure: T={T} d={d} H={H} rel_err={err:.3e}")
    log.info(f"Gradient check over {instances} instances: max rel err {worst:.3e}, failures {failures}")
    return GradCheckReport(max_rel_err=worst, instances=instances, failures=failures, tolerance=tol)


@dataclass(frozen=True)
class HessCheckReport:
    max_rel_err: float
    max_UU_abs: float
    max_symmetry_residual: float
    instances: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance and self.max_UU_abs == 0.0


def hessian_check(rng: np.random.Generator, instances: int = 20, T: int = 3, d: int = 2,
                  h: float = 1e-4, tol: float = 1e-4) -> HessCheckReport:
    """單頭稠密 Hessian 與解析梯度的中心差分 Jacobian 比較"""
    worst = uu = sym = 0.0
    for _ in range(instances):
        X = rng.uniform(-1.0, 1.0, size=(T, d))
        th = HeadParams(U=rng.uniform(-1.0, 1.0, size=(T, d)), W=rng.uniform(-1.0, 1.0, size=(d, d)))
        hess = hess_assemble(X, th)

        def g(vec):
            return grad_single(X, HeadParams.unflatten(vec, T, d)).flatten()

        numeric = fd_jacobian(g, th.flatten(), h)
        worst = max(worst, relative_error(hess.matrix, numeric))
        uu = max(uu, float(np.max(np.abs(hess.UU))))
        sym = max(sym, hess.symmetry_residual())
    log.info(f"Hessian check over {instances} instances: max rel err {worst:.3e}, symmetry residual {sym:.3e}")
    return HessCheckReport(max_rel_err=worst, max_UU_abs=uu, max_symmetry_residual=sym,
                           instances=instances, tolerance=tol)
