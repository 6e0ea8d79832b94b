"""Momentum SGD and Adam over a single parameter array."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class TrainingError(RuntimeError):
    """A training run produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd_momentum"
    learning_rate: float = 10.0
    momentum: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        # lr = 0 is allowed so that a run can be frozen for testing
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("adam needs beta1, beta2 in [0, 1) and eps > 0")


@dataclass
class OptimizerState:
    step: int = 0
    velocity: np.ndarray | None = None
    second_moment: np.ndarray | None = None


def optimizer_step(state: OptimizerState, params: np.ndarray, grads: np.ndarray,
                   cfg: OptimizerConfig) -> tuple[OptimizerState, np.ndarray]:
    """Apply one update and return ``(new_state, new_params)``.

    Momentum follows ``v <- mu v + g; theta <- theta - lr v``.  Adam uses the
    usual bias-corrected moment estimates.  Inputs are not modified.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError(f"params {params.shape} and grads {grads.shape} differ in shape")
    if not np.all(np.isfinite(grads)):
        raise TrainingError(f"non-finite gradient at optimizer step {state.step + 1}")
    step = state.step + 1
    if cfg.kind == "sgd_momentum":
        v = grads.copy() if state.velocity is None else cfg.momentum * state.velocity + grads
        return OptimizerState(step=step, velocity=v), params - cfg.learning_rate * v
    m = np.zeros_like(params) if state.velocity is None else state.velocity
    v2 = np.zeros_like(params) if state.second_moment is None else state.second_moment
    m = cfg.beta1 * m + (1 - cfg.beta1) * grads
    v2 = cfg.beta2 * v2 + (1 - cfg.beta2) * grads * grads
    m_hat = m / (1 - cfg.beta1**step)
    v_hat = v2 / (1 - cfg.beta2**step)
    new = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return OptimizerState(step=step, velocity=m, second_moment=v2), new
