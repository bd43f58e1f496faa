"""Adam with first/second-moment estimates, written for parameter groups.

Each group keeps its own learning rate but shares (beta1, beta2, eps). State
rows can be dropped in lockstep with pruned gaussians.
"""

import numpy as np


class Adam:
    def __init__(self, params: dict[str, np.ndarray], learning_rates: dict[str, float],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if set(params) != set(learning_rates):
            raise ValueError("parameter groups and learning rates must match")
        self.params = params
        self.lr = dict(learning_rates)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr[name] * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def drop_rows(self, keep_mask: np.ndarray) -> None:
        """Remove optimizer state for pruned rows; params are re-sliced by the caller."""
        for name in self.m:
            self.m[name] = self.m[name][keep_mask]
            self.v[name] = self.v[name][keep_mask]
