"""Adam optimizer over named parameter nodes."""

from __future__ import annotations

import numpy as np

from .autodiff import Node
from .errors import ShapeError, TrainingError


class AdamState:
    """Bias-corrected Adam with per-parameter moment buffers.

    Defaults follow the usual convention: beta1=0.9, beta2=0.999, eps=1e-8.
    The step counter increases by one on every call to `step`.
    """

    def __init__(self, params: dict[str, Node], lr: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self):
        """Apply one update using the gradients currently stored on the params.

        Parameters with no accumulated gradient are treated as having zero
        gradient (their moments decay but values only move by the eps term,
        which is exactly zero when the moments are still zero).
        """
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for key, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if g.shape != p.value.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} != parameter shape {p.value.shape} for {key!r}"
                )
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {key!r}")
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
