from dataclasses import dataclass, asdict, field
from typing import Dict, List, Optional


@dataclass(frozen=True)
class BetaConstants:
    """
    損失函數性質常數

    beta1: 自有界梯度常數  ‖∇L̂‖ ≤ β₁ L̂
    beta2: 光滑常數        ‖∇²L̂‖ ≤ β₂
    beta3: 弱凸常數分子    λ_min(∇²L̂) ≥ −(β₃/√H) L̂
    kappa: β₃/√H
    """
    beta1: float
    beta2: float
    beta3: float
    kappa: float


@dataclass(frozen=True)
class LossBounds:
    """Loose (‖θ̃‖_{2,∞}) and tight (max_h ‖U_h‖_F) constants for one parameter point."""
    loose: BetaConstants
    tight: BetaConstants
    R: float
    R_warning: bool = False


@dataclass
class LossReport:
    """
    單個參數點上的損失報告

    CSV 一行，表頭見 CSV_HEADER
    """
    value: float
    grad_norm: float
    beta1: float
    beta2: float
    beta3: float
    kappa: float
    rho: Optional[float] = None
    beta1_tight: Optional[float] = None
    beta2_tight: Optional[float] = None
    beta3_tight: Optional[float] = None
    kappa_tight: Optional[float] = None
    R: Optional[float] = None
    R_warning: bool = False

    CSV_HEADER = ['value', 'grad_norm', 'beta1', 'beta2', 'beta3', 'kappa', 'rho',
                  'beta1_tight', 'beta2_tight', 'beta3_tight', 'kappa_tight', 'R', 'R_warning']

    def __post_init__(self):
        if self.value < 0:
            raise ValueError(f"Loss value must be non-negative, got {self.value}")
        for name in ('beta1', 'beta2', 'beta3', 'kappa'):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    def to_row(self) -> Dict[str, object]:
        return {key: asdict(self)[key] for key in self.CSV_HEADER}


@dataclass
class GlqcReport:
    """Segment check between two parameter points."""
    condition_holds: bool
    segment_max: float
    endpoint_max: float
    ratio: float
    distance: float
    beta3_max: float
    H: int
    losses: List[float] = field(default_factory=list)

    @property
    def conclusion_holds(self) -> bool:
        return self.ratio <= 4.0 / 3.0 + 1e-12
