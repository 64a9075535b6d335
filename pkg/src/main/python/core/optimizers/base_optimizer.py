from abc import ABC, abstractmethod
import logging
from typing import Any, Dict

from src.main.python.core.exceptions import NonFiniteError
from src.main.python.models.model_params import ModelParams
from src.main.python.models.train_config import TrainConfig

log = logging.getLogger(__name__)


class BaseOptimizer(ABC):
    """
    全批量優化器的抽象基類

    優化器只看到 (θ, ∇L̂(θ))；綁定副本的頭共享同一更新，因此直接作用在存儲的頭上。
    """

    def __init__(self, config: TrainConfig, eta: float):
        self.config = config
        self.eta = eta
        self.steps = 0

    @abstractmethod
    def _update(self, th: ModelParams, grad: ModelParams) -> ModelParams:
        """返回 θ_{k+1}"""
        pass

    def step(self, th: ModelParams, grad: ModelParams) -> ModelParams:
        if not grad.is_finite():
            raise NonFiniteError(
                f"Non-finite gradient at step {self.steps} ({self.get_optimizer_name()})",
                details={'step': self.steps, 'grad_norm': float(grad.norm())}
            )
        th.check_compatible(grad)
        new = self._update(th, grad)
        self.steps += 1
        return new

    def reset(self):
        """清除內部狀態（動量、矩估計）"""
        self.steps = 0

    def get_optimizer_name(self) -> str:
        return self.__class__.__name__

    def get_optimizer_info(self) -> Dict[str, Any]:
        return {
            'name': self.get_optimizer_name(),
            'eta': self.eta,
            'steps': self.steps,
        }
