import logging

from .base_optimizer import BaseOptimizer

log = logging.getLogger(__name__)


class GdOptimizer(BaseOptimizer):
    """
    Plain full-batch gradient descent: θ′ = θ − η∇L̂(θ).
    """

    def _update(self, th, grad):
        return th - grad * self.eta
