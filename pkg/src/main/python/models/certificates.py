import math
from dataclasses import dataclass, asdict
from typing import Any, Dict, Optional

import numpy as np

from src.main.python.core.exceptions import CertificateError
from src.main.python.models.model_params import HeadParams, ModelParams


@dataclass(frozen=True)
class TargetParams:
    """
    目標參數構造

    U⋆ = 1_T(μ₊ − μ₋)ᵀ
    W⋆ = μ₊μ₊ᵀ + μ₋μ₋ᵀ + Σ_ℓ ν_ℓ(μ₊ + μ₋)ᵀ
    Ū⋆, W̄⋆ 為 Frobenius 單位化版本；U_opt = U⋆/(S√(2T))，W_opt = W⋆/(S²√(2(M+1)))
    """
    U_star: np.ndarray
    W_star: np.ndarray
    U_bar: np.ndarray
    W_bar: np.ndarray
    U_opt: np.ndarray
    W_opt: np.ndarray

    @property
    def theta_opt(self) -> HeadParams:
        return HeadParams(U=self.U_opt, W=self.W_opt)

    def theta_star(self, sign: float = 1.0) -> HeadParams:
        """θ⋆ = (Ū⋆, sign·W̄⋆)，範數 √2"""
        return HeadParams(U=self.U_bar, W=-self.W_bar if sign < 0 else self.W_bar)


@dataclass
class GoodInitReport:
    """P1 / P2 / P3 的經驗值、理論值與判定"""
    B2: float
    B_phi: float
    ntk_margin_min: float
    ntk_margin_mean: float
    gamma_star_formula: Optional[float]
    B2_theory: Optional[float]
    B_phi_theory: Optional[float]
    P_empirical: Optional[float]
    delta: float
    H: int
    n: int
    p1_pass: Optional[bool]
    p2_pass: Optional[bool]
    p3_pass: bool

    @property
    def gamma(self) -> float:
        """P3 使用的 margin：有公式值時為 γ⋆/2，否則為經驗最小值"""
        if self.gamma_star_formula is not None:
            return self.gamma_star_formula / 2.0
        return self.ntk_margin_min

    @property
    def passed(self) -> bool:
        return all(flag is not False for flag in (self.p1_pass, self.p2_pass, self.p3_pass))

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc['gamma'] = self.gamma
        doc['passed'] = self.passed
        return doc


@dataclass(frozen=True)
class RealizabilityWitness:
    """
    g₀(ε) = (2B_Φ + log(1/ε))/γ，g(ε) = B₂ + g₀(ε)
    """
    B2: float
    B_phi: float
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise CertificateError(f"Realizability witness needs gamma > 0, got {self.gamma}",
                                   details={'gamma': self.gamma})

    def g0(self, eps: float) -> float:
        if not 0 < eps:
            raise ValueError(f"eps must be positive, got {eps}")
        return (2.0 * self.B_phi + math.log(1.0 / eps)) / self.gamma

    def g(self, eps: float) -> float:
        return self.B2 + self.g0(eps)

    def target(self, th0: ModelParams, th_star: ModelParams, eps: float) -> ModelParams:
        """θ^(ε) = θ₀ + g₀(ε)·θ̃⋆"""
        return th0 + th_star * self.g0(eps)


@dataclass(frozen=True)
class HeadRequirements:
    """各定理要求的最小頭數（無定義時為 inf）"""
    H_train: float
    H_gen: float
    H_realiz: float
    H_P3: float
    H_cor: float
    g0: float
    g: float

    def satisfied_by(self, H: int) -> Dict[str, bool]:
        return {name: H >= getattr(self, name) for name in ('H_train', 'H_gen', 'H_realiz', 'H_P3', 'H_cor')}

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
