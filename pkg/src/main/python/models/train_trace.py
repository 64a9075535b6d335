from dataclasses import dataclass, asdict, field
from typing import Any, Dict, List, Optional

import numpy as np

from src.main.python.models.model_params import ModelParams

TRACE_HEADER = ['iter', 'train_loss', 'test_loss', 'min_margin', 'grad_norm', 'dist_to_init',
                'avg_W_norm', 'avg_U_norm', 'attn_rel_mass', 'align_W', 'align_U']


@dataclass
class TraceRow:
    """單次記錄的訓練指標；缺少上下文的指標為 None"""
    iter: int
    train_loss: float
    test_loss: Optional[float]
    min_margin: float
    grad_norm: float
    dist_to_init: float
    avg_W_norm: float
    avg_U_norm: float
    attn_rel_mass: Optional[float] = None
    align_W: Optional[float] = None
    align_U: Optional[float] = None

    def to_row(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainTrace:
    """
    訓練軌跡

    rows 按 record_every 抽樣；losses / grad_norms / beta2 對每個 k = 0..K 都有記錄，
    供下降檢查使用。params 僅在 keep_params 時保存，與 rows 一一對應。
    target_dists 為 ‖θ_k − θ‖，只在訓練時給出目標 θ 才記錄。
    """
    rows: List[TraceRow]
    eta: float
    optimizer: str
    theta0: ModelParams
    final: ModelParams
    params: List[ModelParams] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    beta2: List[float] = field(default_factory=list)
    target_dists: List[float] = field(default_factory=list)
    diverged: bool = False

    @property
    def K(self) -> int:
        return len(self.losses) - 1

    @property
    def iters(self) -> List[int]:
        return [row.iter for row in self.rows]

    def column(self, name: str) -> np.ndarray:
        values = [getattr(row, name) for row in self.rows]
        return np.array([np.nan if v is None else v for v in values], dtype=np.float64)

    def first_iter_below(self, threshold: float) -> Optional[int]:
        """訓練損失首次 ≤ threshold 的迭代；從未達到時為 None"""
        for k, loss in enumerate(self.losses):
            if loss <= threshold:
                return k
        return None


@dataclass
class PhaseOneResult:
    """
    第一階段結果

    theta1 的每個頭 U_h = α_h·1_T·common_rowᵀ，W_h = 0
    """
    theta1: ModelParams
    alpha: List[int]
    common_row: np.ndarray
    p: Optional[np.ndarray]
    P_empirical: Optional[float]


@dataclass
class DescentViolation:
    step: int
    lhs: float
    rhs: float


@dataclass
class DescentReport:
    checked: int
    skipped: int
    violations: List[DescentViolation] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return not self.violations


@dataclass
class TheoremReport:
    """
    訓練損失定理兩側的數值

    certified 為 False 時不等式仍被評估，但前提（頭數或步長）不滿足。
    """
    avg_loss: float
    avg_bound: float
    final_dist: float
    final_dist_bound: float
    max_iterate_dist: float
    iterate_dist_bound: float
    certified: bool
    K: int

    @property
    def avg_holds(self) -> bool:
        return self.avg_loss <= self.avg_bound

    @property
    def final_dist_holds(self) -> bool:
        return self.final_dist <= self.final_dist_bound

    @property
    def iterate_dist_holds(self) -> bool:
        return self.max_iterate_dist <= self.iterate_dist_bound

    @property
    def holds(self) -> bool:
        return self.avg_holds and self.final_dist_holds and self.iterate_dist_holds

    @property
    def slack(self) -> Dict[str, float]:
        return {
            'avg': self.avg_bound - self.avg_loss,
            'final_dist': self.final_dist_bound - self.final_dist,
            'iterate_dist': self.iterate_dist_bound - self.max_iterate_dist,
        }

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc.update(avg_holds=self.avg_holds, final_dist_holds=self.final_dist_holds,
                   iterate_dist_holds=self.iterate_dist_holds, holds=self.holds)
        return doc


@dataclass(frozen=True)
class GoodInitBounds:
    """良好初始化下的推論界"""
    train_bound: float
    gen_bound: float
    eta_cap: float
    H_cor: float
    g0: float
    rho: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
