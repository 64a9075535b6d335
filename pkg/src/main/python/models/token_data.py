from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.main.python.core.exceptions import (
    DimensionError, IndexOutOfRangeError, NonFiniteError, SpecValidationError,
    create_shape_mismatch_error
)


@dataclass(frozen=True)
class TokenMatrix:
    """
    T×d 輸入 token 矩陣，第 t 行為 x_t

    R 為最大行範數，由數據重新計算而非外部傳入
    """
    X: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionError(f"TokenMatrix needs a nonempty T×d array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise NonFiniteError("TokenMatrix contains non-finite entries")
        X.setflags(write=False)
        object.__setattr__(self, 'X', X)

    @property
    def T(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def R(self) -> float:
        """最大 token 範數 max_t ‖x_t‖"""
        return float(np.max(np.linalg.norm(self.X, axis=1)))


@dataclass(frozen=True)
class LabeledExample:
    """帶標籤的單個樣本 (X, y)，y ∈ {+1, −1}"""
    x: TokenMatrix
    y: int

    def __post_init__(self):
        if self.y not in (1, -1):
            raise SpecValidationError(f"Label must be +1 or -1, got {self.y}")


@dataclass(frozen=True)
class RelevantMask:
    """Label-relevant token positions of one example."""
    relevant: tuple

    @property
    def size(self) -> int:
        return len(self.relevant)

    def as_bool(self, T: int) -> np.ndarray:
        mask = np.zeros(T, dtype=bool)
        mask[list(self.relevant)] = True
        return mask


@dataclass
class Dataset:
    """
    訓練集 / 測試集

    X 以 n×T×d 陣列保存以便對樣本軸向量化；examples 屬性按需構造 LabeledExample
    """
    X: np.ndarray
    y: np.ndarray
    declared_R: Optional[float] = None
    name: str = field(default='dataset')

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 3 or self.X.shape[0] < 1:
            raise DimensionError(f"Dataset needs an n×T×d array with n ≥ 1, got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise create_shape_mismatch_error('labels', (self.X.shape[0],), self.y.shape)
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise SpecValidationError("Labels must be +1 or -1")
        if not np.all(np.isfinite(self.X)):
            raise NonFiniteError("Dataset contains non-finite tokens")
        if self.declared_R is not None and self.R > self.declared_R * (1 + 1e-12):
            raise SpecValidationError(
                f"Token norm {self.R:.6g} exceeds declared bound R={self.declared_R:.6g}",
                details={'R': self.R, 'declared_R': self.declared_R}
            )

    @classmethod
    def from_examples(cls, examples: Sequence[LabeledExample], name: str = 'dataset') -> 'Dataset':
        if not examples:
            raise DimensionError("Dataset needs at least one example")
        shape = examples[0].x.X.shape
        for ex in examples:
            if ex.x.X.shape != shape:
                raise create_shape_mismatch_error('example tokens', shape, ex.x.X.shape)
        X = np.stack([ex.x.X for ex in examples])
        y = np.array([ex.y for ex in examples], dtype=np.float64)
        return cls(X=X, y=y, name=name)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[2]

    @property
    def R(self) -> float:
        """數據集層級的 R：所有 token 的最大範數"""
        return float(np.max(np.linalg.norm(self.X, axis=2)))

    def example(self, i: int) -> LabeledExample:
        if not 0 <= i < self.n:
            raise IndexOutOfRangeError(f"Example index {i} out of range [0, {self.n})")
        return LabeledExample(x=TokenMatrix(self.X[i]), y=int(self.y[i]))

    @property
    def examples(self) -> List[LabeledExample]:
        return [self.example(i) for i in range(self.n)]

    def without(self, i: int) -> 'Dataset':
        """去掉第 i 個樣本後的數據集"""
        if not 0 <= i < self.n:
            raise IndexOutOfRangeError(f"Example index {i} out of range [0, {self.n})")
        keep = np.arange(self.n) != i
        return Dataset(X=self.X[keep], y=self.y[keep], name=f"{self.name}-without-{i}")

    def subset(self, indices: Sequence[int]) -> 'Dataset':
        idx = np.asarray(indices, dtype=int)
        return Dataset(X=self.X[idx], y=self.y[idx], name=self.name)

    def label_mean(self) -> float:
        return float(np.mean(self.y))
