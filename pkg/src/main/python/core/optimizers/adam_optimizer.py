import logging

import numpy as np

from src.main.python.models.model_params import ModelParams
from .base_optimizer import BaseOptimizer

log = logging.getLogger(__name__)


class AdamOptimizer(BaseOptimizer):
    """
    Adam with bias-corrected first and second moments.

    Moments are kept per stored coordinate; tied replicas see identical gradients,
    so this matches running Adam on the expanded model.
    """

    def __init__(self, config, eta):
        super().__init__(config, eta)
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.m = None
        self.v = None

    def _update(self, th, grad):
        g = grad.flatten()
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)

        t = self.steps + 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** t)
        v_hat = self.v / (1.0 - self.beta2 ** t)

        vec = th.flatten() - self.eta * m_hat / (np.sqrt(v_hat) + self.eps)
        return ModelParams.unflatten(vec, th.T, th.d, th.stored_heads, th.replicas)

    def reset(self):
        super().reset()
        self.m = None
        self.v = None

    def get_optimizer_info(self):
        info = super().get_optimizer_info()
        info.update({'beta1': self.beta1, 'beta2': self.beta2, 'eps': self.eps})
        return info
