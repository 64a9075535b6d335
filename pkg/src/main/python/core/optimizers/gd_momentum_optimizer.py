import logging

from .base_optimizer import BaseOptimizer

log = logging.getLogger(__name__)


class GdMomentumOptimizer(BaseOptimizer):
    """
    Heavy-ball momentum: v ← μv + ∇L̂(θ), θ ← θ − ηv.
    """

    def __init__(self, config, eta):
        super().__init__(config, eta)
        self.momentum = config.momentum
        self.velocity = None

    def _update(self, th, grad):
        if self.velocity is None:
            self.velocity = grad.copy()
        else:
            self.velocity = self.velocity * self.momentum + grad
        return th - self.velocity * self.eta

    def reset(self):
        super().reset()
        self.velocity = None

    def get_optimizer_info(self):
        info = super().get_optimizer_info()
        info['momentum'] = self.momentum
        return info
