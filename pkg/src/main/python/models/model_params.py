from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np

from src.main.python.core.exceptions import (
    DimensionError, ShapeMismatchError, create_shape_mismatch_error
)


@dataclass(frozen=True)
class HeadParams:
    """
    單個注意力頭的可訓練參數

    U: T×d 解碼矩陣（已吸收 value 矩陣）
    W: d×d key-query 乘積 W_Q W_Kᵀ
    """
    U: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        U = np.array(self.U, dtype=np.float64)
        W = np.array(self.W, dtype=np.float64)
        if U.ndim != 2 or W.ndim != 2:
            raise DimensionError(f"HeadParams needs 2-D U and W, got {U.shape} and {W.shape}")
        d = U.shape[1]
        if W.shape != (d, d):
            raise create_shape_mismatch_error('W', (d, d), W.shape)
        object.__setattr__(self, 'U', U)
        object.__setattr__(self, 'W', W)

    @property
    def T(self) -> int:
        return self.U.shape[0]

    @property
    def d(self) -> int:
        return self.U.shape[1]

    def flatten(self) -> np.ndarray:
        """U 按行展開，接著 W 按行展開"""
        return np.concatenate([self.U.ravel(), self.W.ravel()])

    @classmethod
    def unflatten(cls, vec: np.ndarray, T: int, d: int) -> 'HeadParams':
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (T * d + d * d,):
            raise create_shape_mismatch_error('head vector', (T * d + d * d,), vec.shape)
        return cls(U=vec[:T * d].reshape(T, d), W=vec[T * d:].reshape(d, d))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.U ** 2) + np.sum(self.W ** 2)))

    @classmethod
    def zeros(cls, T: int, d: int) -> 'HeadParams':
        return cls(U=np.zeros((T, d)), W=np.zeros((d, d)))


class ModelParams:
    """
    多頭模型參數 θ̃ = concat(θ_1, …, θ_H)

    內部以 (H_stored, T, d) 與 (H_stored, d, d) 陣列保存。replicas 表示每個存儲頭
    代表的相同副本數，總頭數 H = H_stored · replicas；範數與內積按展開後的模型計算。
    """

    def __init__(self, U: np.ndarray, W: np.ndarray, replicas: int = 1):
        U = np.array(U, dtype=np.float64)
        W = np.array(W, dtype=np.float64)
        if U.ndim != 3 or W.ndim != 3 or U.shape[0] < 1:
            raise DimensionError(f"ModelParams needs (H,T,d) and (H,d,d) arrays, got {U.shape} and {W.shape}")
        H, T, d = U.shape
        if W.shape != (H, d, d):
            raise create_shape_mismatch_error('W stack', (H, d, d), W.shape)
        if int(replicas) < 1:
            raise DimensionError(f"replicas must be ≥ 1, got {replicas}")
        self.U = U
        self.W = W
        self.replicas = int(replicas)

    # ---- construction -------------------------------------------------
    @classmethod
    def zeros(cls, T: int, d: int, H: int = 1, replicas: int = 1) -> 'ModelParams':
        return cls(np.zeros((H, T, d)), np.zeros((H, d, d)), replicas)

    @classmethod
    def from_heads(cls, heads: Sequence[HeadParams], replicas: int = 1) -> 'ModelParams':
        if not heads:
            raise DimensionError("ModelParams needs at least one head")
        shape = (heads[0].T, heads[0].d)
        for head in heads:
            if (head.T, head.d) != shape:
                raise create_shape_mismatch_error('head', shape, (head.T, head.d))
        return cls(np.stack([h.U for h in heads]), np.stack([h.W for h in heads]), replicas)

    @classmethod
    def tied(cls, head: HeadParams, H: int) -> 'ModelParams':
        """H 個相同頭，以單個存儲頭表示"""
        return cls(head.U[None], head.W[None], replicas=H)

    def copy(self) -> 'ModelParams':
        return ModelParams(self.U.copy(), self.W.copy(), self.replicas)

    def expand(self) -> 'ModelParams':
        """展開所有副本，replicas 變為 1"""
        if self.replicas == 1:
            return self.copy()
        return ModelParams(np.repeat(self.U, self.replicas, axis=0),
                           np.repeat(self.W, self.replicas, axis=0), 1)

    # ---- shape --------------------------------------------------------
    @property
    def stored_heads(self) -> int:
        return self.U.shape[0]

    @property
    def H(self) -> int:
        return self.U.shape[0] * self.replicas

    @property
    def T(self) -> int:
        return self.U.shape[1]

    @property
    def d(self) -> int:
        return self.U.shape[2]

    @property
    def head_dim(self) -> int:
        return self.T * self.d + self.d * self.d

    @property
    def heads(self) -> List[HeadParams]:
        return [HeadParams(U=self.U[h], W=self.W[h]) for h in range(self.stored_heads)]

    def head(self, h: int) -> HeadParams:
        return HeadParams(U=self.U[h], W=self.W[h])

    def check_compatible(self, other: 'ModelParams'):
        if self.U.shape != other.U.shape or self.replicas != other.replicas:
            raise ShapeMismatchError(
                f"Incompatible parameters: {self.U.shape}×{self.replicas} vs {other.U.shape}×{other.replicas}",
                details={'left': list(self.U.shape), 'right': list(other.U.shape)}
            )

    # ---- vector space -------------------------------------------------
    def flatten(self) -> np.ndarray:
        """按存儲頭順序展開，每頭先 U 後 W（皆按行）"""
        H = self.stored_heads
        return np.concatenate([self.U.reshape(H, -1), self.W.reshape(H, -1)], axis=1).ravel()

    @classmethod
    def unflatten(cls, vec: np.ndarray, T: int, d: int, H: int, replicas: int = 1) -> 'ModelParams':
        vec = np.asarray(vec, dtype=np.float64)
        size = T * d + d * d
        if vec.shape != (H * size,):
            raise create_shape_mismatch_error('parameter vector', (H * size,), vec.shape)
        blocks = vec.reshape(H, size)
        return cls(blocks[:, :T * d].reshape(H, T, d), blocks[:, T * d:].reshape(H, d, d), replicas)

    def __add__(self, other: 'ModelParams') -> 'ModelParams':
        self.check_compatible(other)
        return ModelParams(self.U + other.U, self.W + other.W, self.replicas)

    def __sub__(self, other: 'ModelParams') -> 'ModelParams':
        self.check_compatible(other)
        return ModelParams(self.U - other.U, self.W - other.W, self.replicas)

    def __mul__(self, scalar: float) -> 'ModelParams':
        return ModelParams(self.U * scalar, self.W * scalar, self.replicas)

    __rmul__ = __mul__

    def __neg__(self) -> 'ModelParams':
        return self * -1.0

    def dot(self, other: 'ModelParams') -> float:
        self.check_compatible(other)
        return float(self.replicas * (np.sum(self.U * other.U) + np.sum(self.W * other.W)))

    def head_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.U ** 2, axis=(1, 2)) + np.sum(self.W ** 2, axis=(1, 2)))

    def norm(self) -> float:
        """‖θ̃‖₂（展開後的歐氏範數）"""
        return float(np.sqrt(self.replicas * np.sum(self.head_norms() ** 2)))

    def max_head_norm(self) -> float:
        """‖θ̃‖_{2,∞} = max_h ‖θ_h‖"""
        return float(np.max(self.head_norms()))

    def max_U_frobenius(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.U ** 2, axis=(1, 2)))))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.W)))

    def allclose(self, other: 'ModelParams', atol: float = 0.0, rtol: float = 0.0) -> bool:
        return (self.U.shape == other.U.shape and self.replicas == other.replicas
                and np.allclose(self.U, other.U, atol=atol, rtol=rtol)
                and np.allclose(self.W, other.W, atol=atol, rtol=rtol))

    # ---- serialization ------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        return {
            'T': self.T,
            'd': self.d,
            'H': self.H,
            'replicas': self.replicas,
            'heads': [{'U': self.U[h].tolist(), 'W': self.W[h].tolist()} for h in range(self.stored_heads)],
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'ModelParams':
        replicas = int(doc.get('replicas', 1))
        heads = [HeadParams(U=np.array(h['U']), W=np.array(h['W'])) for h in doc['heads']]
        params = cls.from_heads(heads, replicas)
        if (params.T, params.d, params.H) != (doc['T'], doc['d'], doc['H']):
            raise create_shape_mismatch_error('checkpoint', (doc['T'], doc['d'], doc['H']),
                                              (params.T, params.d, params.H))
        return params

    def __repr__(self) -> str:
        return f"ModelParams(T={self.T}, d={self.d}, H={self.H}, stored={self.stored_heads})"
