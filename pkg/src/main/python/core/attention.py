"""
單頭與多頭 softmax 注意力模型

Φ(X; W, U) = ⟨U, softmax(XWXᵀ)X⟩
Φ̃(X; θ̃)  = (1/√H) Σ_h Φ(X; θ_h)

批量函數接受 (n, T, d) 陣列，單樣本函數接受 TokenMatrix 或 (T, d) 陣列。
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from src.main.python.core.exceptions import create_shape_mismatch_error
from src.main.python.core.linalg import softmax
from src.main.python.models.model_params import HeadParams, ModelParams
from src.main.python.models.token_data import TokenMatrix

log = logging.getLogger(__name__)

Tokens = Union[TokenMatrix, np.ndarray]


@dataclass(frozen=True)
class ParamNorms:
    euclid: float
    max_per_head: float
    max_U_frobenius: float


def as_array(x: Tokens) -> np.ndarray:
    if isinstance(x, TokenMatrix):
        return x.X
    return np.asarray(x, dtype=np.float64)


def check_shapes(X: np.ndarray, T: int, d: int):
    if X.shape[-2:] != (T, d):
        raise create_shape_mismatch_error('tokens', (T, d), X.shape[-2:])


def attention_matrix(x: Tokens, W: np.ndarray) -> np.ndarray:
    """
    注意力矩陣 softmax(XWXᵀ)，第 t 行為 softmax(XWᵀx_t)

    支持 (..., T, d) 批量輸入，返回 (..., T, T) 行隨機矩陣。
    """
    X = as_array(x)
    W = np.asarray(W, dtype=np.float64)
    d = X.shape[-1]
    if W.shape != (d, d):
        raise create_shape_mismatch_error('W', (d, d), W.shape)
    logits = X @ W @ np.swapaxes(X, -1, -2)
    return softmax(logits)


def forward_single(x: Tokens, th: HeadParams) -> float:
    """Φ(X; W, U) = ⟨U, softmax(XWXᵀ)X⟩"""
    X = as_array(x)
    check_shapes(X, th.T, th.d)
    A = attention_matrix(X, th.W)
    return float(np.sum(th.U * (A @ X)))


def head_outputs(X: np.ndarray, th: ModelParams) -> np.ndarray:
    """
    每個存儲頭在每個樣本上的輸出

    Returns:
        (n, H_stored) 陣列，元素為 Φ(X_i; θ_h)
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    check_shapes(X, th.T, th.d)
    logits = np.einsum('nti,hij,nsj->nhts', X, th.W, X)
    A = softmax(logits)
    AX = np.einsum('nhts,nsd->nhtd', A, X)
    return np.einsum('htd,nhtd->nh', th.U, AX)


def model_outputs(X: np.ndarray, th: ModelParams) -> np.ndarray:
    """批量 Φ̃(X_i; θ̃)，返回長度 n 的向量"""
    per_head = head_outputs(X, th)
    return th.replicas * np.sum(per_head, axis=1) / np.sqrt(th.H)


def forward_multi(x: Tokens, th: ModelParams) -> float:
    """Φ̃(X; θ̃) = (1/√H) Σ_h Φ(X; θ_h)"""
    X = as_array(x)
    check_shapes(X, th.T, th.d)
    return float(model_outputs(X[None], th)[0])


def param_norms(th: ModelParams) -> ParamNorms:
    return ParamNorms(
        euclid=th.norm(),
        max_per_head=th.max_head_norm(),
        max_U_frobenius=th.max_U_frobenius(),
    )


def pooling_decoder(u: np.ndarray, T: int) -> np.ndarray:
    """平均池化解碼器：U = 1_T uᵀ"""
    u = np.asarray(u, dtype=np.float64)
    return np.tile(u, (T, 1))


def last_token_decoder(u: np.ndarray, T: int) -> np.ndarray:
    """只讀取最後一個 token 的解碼器：U 只有最後一行非零"""
    u = np.asarray(u, dtype=np.float64)
    U = np.zeros((T, u.shape[0]))
    U[-1] = u
    return U
