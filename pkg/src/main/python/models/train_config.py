from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, Optional

from src.main.python.core.exceptions import ConfigurationError


class TrainFieldError(ValueError):
    """某個訓練超參數非法"""

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


class OptimizerName(Enum):
    """可用的優化器"""
    GD = "gd"
    GD_MOMENTUM = "gd_momentum"
    ADAM = "adam"


class StepSizeRule(Enum):
    """步長規則"""
    EXPLICIT = "explicit"            # 直接使用 eta
    AUTO_THEOREM = "auto_theorem"    # 1 ∧ 1/ρ(θ) ∧ ‖θ−θ₀‖²/(KL̂(θ)) ∧ ‖θ−θ₀‖²/L̂(θ₀)
    SQRTH_SCALED = "sqrtH_scaled"    # eta_base·√H


@dataclass
class TrainConfig:
    """
    訓練配置

    K = 0 時只記錄初始點。
    """
    K: int
    optimizer: OptimizerName = OptimizerName.GD
    step_rule: StepSizeRule = StepSizeRule.EXPLICIT
    eta: Optional[float] = None
    eta_base: Optional[float] = None
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    record_every: int = 1
    divergence_loss: float = 1e6
    keep_params: bool = False

    def __post_init__(self):
        if isinstance(self.optimizer, str):
            self.optimizer = _parse_enum(OptimizerName, self.optimizer, 'optimizer')
        if isinstance(self.step_rule, str):
            self.step_rule = _parse_enum(StepSizeRule, self.step_rule, 'step_rule')
        if self.K < 0:
            raise TrainFieldError('K', f"K must be ≥ 0, got {self.K}")
        if self.record_every < 1:
            raise TrainFieldError('record_every', f"record_every must be ≥ 1, got {self.record_every}")
        if self.step_rule == StepSizeRule.EXPLICIT:
            if self.eta is None or self.eta < 0:
                raise TrainFieldError('eta', f"Explicit step size needs eta ≥ 0, got {self.eta}")
        if self.step_rule == StepSizeRule.SQRTH_SCALED:
            if self.eta_base is None or self.eta_base <= 0:
                raise TrainFieldError('eta_base', f"sqrtH_scaled step size needs eta_base > 0, got {self.eta_base}")
        if not 0 <= self.momentum < 1:
            raise TrainFieldError('momentum', f"momentum must lie in [0, 1), got {self.momentum}")
        for name in ('adam_beta1', 'adam_beta2'):
            if not 0 <= getattr(self, name) < 1:
                raise TrainFieldError(name, f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.adam_eps <= 0:
            raise TrainFieldError('adam_eps', f"adam_eps must be positive, got {self.adam_eps}")
        if self.divergence_loss <= 0:
            raise TrainFieldError('divergence_loss', f"divergence_loss must be positive, got {self.divergence_loss}")

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc['optimizer'] = self.optimizer.value
        doc['step_rule'] = self.step_rule.value
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'TrainConfig':
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown train config fields: {sorted(unknown)}",
                                     details={'field': f"train.{sorted(unknown)[0]}"})
        try:
            return cls(**doc)
        except (TypeError, ValueError) as e:
            field_name = getattr(e, 'field', None)
            raise ConfigurationError(f"Invalid train config: {e}",
                                     details={'field': f"train.{field_name}" if field_name else 'train'}) from e


def _parse_enum(enum_cls, value: str, field_name: str):
    try:
        return enum_cls(value)
    except ValueError:
        allowed = [member.value for member in enum_cls]
        raise TrainFieldError(field_name, f"{field_name} must be one of {allowed}, got '{value}'")
