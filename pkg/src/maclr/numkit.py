"""Dense numeric kernels, seeded RNG streams, dropout masks, Adam, LR schedule.

Matrices are plain 2-D numpy arrays (float32 for model state; every kernel
is dtype-preserving so gradient checks can run the same code in float64).
All kernels are pure and deterministic for fixed inputs on a single thread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError


def require_finite(name: str, arr: np.ndarray) -> None:
    """Raise NumericError naming the offending block if arr has non-finite entries."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in '{name}'")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit conformance check."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------

_STREAM_IDS = {"dropout": 1, "sampling": 2, "init": 3}


class RngStreams:
    """Independent named generators derived from one seed.

    Each purpose (dropout, sampling, init) gets its own stream so consuming
    one never shifts the others.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.dropout = np.random.default_rng([self.seed, _STREAM_IDS["dropout"]])
        self.sampling = np.random.default_rng([self.seed, _STREAM_IDS["sampling"]])
        self.init = np.random.default_rng([self.seed, _STREAM_IDS["init"]])


def dropout_mask(rng: np.random.Generator, n: int, rate: float) -> np.ndarray:
    """Inverted dropout mask: entries are 0 with probability rate, else 1/(1-rate).

    Scaling at mask time keeps inference mask-free; each entry has
    expectation 1.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(n, dtype=np.float32)
    keep = rng.random(n) >= rate
    return keep.astype(np.float32) / np.float32(1.0 - rate)


# ---------------------------------------------------------------------------
# Learning-rate schedule: linear warmup then linear decay to zero
# ---------------------------------------------------------------------------


@dataclass
class LrSchedule:
    base_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(
                f"warmup_steps {self.warmup_steps} must lie in [0, {self.total_steps}]"
            )


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Piecewise-linear LR: 0 -> base_lr over warmup_steps, then -> 0 at total_steps."""
    if step < 0 or step > schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step <= schedule.warmup_steps:
        if schedule.warmup_steps == 0:
            return schedule.base_lr
        return schedule.base_lr * step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    return schedule.base_lr * (schedule.total_steps - step) / span


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter-block moment buffers; name only used in error messages."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    name: str = "params"

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.step < 0:
            raise ValueError("step counter must be non-negative")


def adam_state_like(params: np.ndarray, name: str = "params", *,
                    beta1: float = 0.9, beta2: float = 0.999,
                    eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=np.zeros_like(params),
        v=np.zeros_like(params),
        beta1=beta1, beta2=beta2, eps=eps, name=name,
    )


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              lr: float) -> np.ndarray:
    """One bias-corrected Adam update, in place on params and state."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise DimensionError(
            f"adam_step shape mismatch in '{state.name}': params {params.shape}, "
            f"grads {grads.shape}, moments {state.m.shape}"
        )
    if lr < 0:
        raise ValueError(f"lr must be non-negative, got {lr}")
    if not np.all(np.isfinite(grads)):
        raise NumericError(f"non-finite gradient in '{state.name}'")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * np.square(grads)
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    params -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(params.dtype)
    return params
