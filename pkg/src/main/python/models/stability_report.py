from dataclasses import dataclass, asdict, field
from typing import Any, Dict, List, Optional

import numpy as np


@dataclass
class StabilityRow:
    """
    單個檢查點 K 的留一穩定性

    gap_estimate 需要測試集；lipschitz_G / bound_rhs / lemma_rhs 需要目標 θ
    """
    K: int
    avg_stability: float
    gap_estimate: Optional[float] = None
    lipschitz_G: Optional[float] = None
    bound_rhs: Optional[float] = None
    lemma_rhs: Optional[float] = None

    CSV_HEADER = ['K', 'avg_stability', 'gap_estimate', 'lipschitz_G', 'bound_rhs', 'lemma_rhs']

    def __post_init__(self):
        if not self.avg_stability >= 0:
            raise ValueError(f"avg_stability must be non-negative, got {self.avg_stability}")

    def to_row(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class StabilityReport:
    """留一實驗結果；per_sample 為最後檢查點上的 ‖θ_K − θ_K^{¬i}‖"""
    rows: List[StabilityRow]
    eta: float
    n: int
    per_sample: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def final(self) -> StabilityRow:
        return self.rows[-1]

    @property
    def lemma_holds(self) -> Optional[bool]:
        """最後檢查點上平均穩定性是否不超過引理右側"""
        if self.final.lemma_rhs is None:
            return None
        return self.final.avg_stability <= self.final.lemma_rhs


@dataclass
class RecursionViolation:
    step: int
    lhs: float
    rhs: float


@dataclass
class RecursionReport:
    """
    逐步檢查 ‖θ_{k+1} − θ_{k+1}^{¬i}‖ ≤ f_k‖θ_k − θ_k^{¬i}‖ + (ηβ₁(θ_k)/n)ℓ_i(θ_k)
    """
    index: int
    factors: List[float]
    violations: List[RecursionViolation] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return not self.violations
