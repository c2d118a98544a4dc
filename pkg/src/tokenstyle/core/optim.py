"""Adam with linear warmup and global-norm gradient clipping."""

import logging
from typing import Dict, Optional

import numpy as np

from ..models.checkpoint_models import AdamState

logger = logging.getLogger(__name__)


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items()))))


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """
    Scale gradients in place so their global norm is at most max_norm.

    Returns:
        float: the norm before clipping
    """
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        logger.debug(f"Clipping gradient norm {norm:.4f} to {max_norm}")
        scale = max_norm / (norm + 1e-12)
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


def warmup_lr(base_lr: float, step: int, warmup: int) -> float:
    """Linear warmup from base_lr / warmup at step 0 to base_lr at step warmup - 1."""
    if warmup <= 0:
        return base_lr
    return base_lr * min(1.0, (step + 1) / warmup)


class Adam:
    """
    Adam over a dictionary of arrays.

    The optimizer state is an AdamState so it can be checkpointed and
    restored exactly.
    """

    def __init__(
        self,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        state: Optional[AdamState] = None,
    ):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = state if state is not None else AdamState()

    def step(
        self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float
    ) -> None:
        """Update params in place."""
        self.state.t += 1
        t = self.state.t
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t
        for name in sorted(grads):
            g = grads[name]
            m = self.state.m.get(name)
            v = self.state.v.get(name)
            if m is None:
                m = np.zeros_like(params[name])
                v = np.zeros_like(params[name])
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.state.m[name] = m
            self.state.v[name] = v
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            params[name] = params[name] - lr * update
