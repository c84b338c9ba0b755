"""Coefficient schedules for the residual diffusion process.

A schedule fixes, for every timestep t in 0..T, the cumulative mixing
coefficients of the forward process

    I_t = (alpha_bar_t - beta_bar_t) * I_LQ + (1 - alpha_bar_t) * I_HQ
          + delta_bar_t * eps

with the boundary constraints alpha_bar_T = 1 (the clean image vanishes at
the terminal step), beta_bar_T = 1 - gamma_T (so the degraded image keeps
weight gamma_T), and delta_bar_T = delta_max.  Noise accumulates in
quadrature, so per-step delta_t satisfies
delta_bar_t = sqrt(sum_{s<=t} delta_s^2).
"""

from dataclasses import dataclass, field

import numpy as np

SHAPES = ("linear", "cosine")


@dataclass(frozen=True)
class ScheduleConfig:
    """Schedule parameters: step count, terminal LQ weight, ramp shape."""

    T: int = 100
    gamma_T: float = 0.3
    shape: str = "linear"
    delta_max: float = 0.05

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if not 0.0 <= self.gamma_T <= 1.0:
            raise ValueError(f"gamma_T must be in [0, 1], got {self.gamma_T}")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if self.delta_max < 0.0:
            raise ValueError(f"delta_max must be >= 0, got {self.delta_max}")


@dataclass(frozen=True)
class SchedulePlan:
    """Frozen per-step and cumulative coefficient arrays.

    ``alpha``, ``beta``, ``delta`` hold the per-step coefficients for
    t = 1..T (index t-1).  ``alpha_bar``, ``beta_bar``, ``delta_bar`` and
    ``gamma_bar`` are indexed directly by t = 0..T.  All arrays are
    read-only; a plan is safe to share across workers.
    """

    config: ScheduleConfig
    alpha: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    delta: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    beta_bar: np.ndarray = field(repr=False)
    delta_bar: np.ndarray = field(repr=False)
    gamma_bar: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return self.config.T

    @property
    def gamma_T(self) -> float:
        return float(self.gamma_bar[-1])


def _ramp(T: int, shape: str) -> np.ndarray:
    """Monotone ramp r(t) on t = 0..T with r(0) = 0 and r(T) = 1."""
    t = np.arange(T + 1, dtype=np.float64)
    if shape == "linear":
        return t / T
    if shape == "cosine":
        return (1.0 - np.cos(np.pi * t / T)) / 2.0
    raise ValueError(f"unknown shape {shape!r}")


def build_schedule(config: ScheduleConfig) -> SchedulePlan:
    """Build the coefficient arrays for ``config``.

    The cumulative curves share one ramp: alpha_bar_t = r(t),
    beta_bar_t = (1 - gamma_T) * r(t), delta_bar_t = delta_max * r(t),
    which meets every boundary constraint by construction.
    """
    r = _ramp(config.T, config.shape)
    alpha_bar = r.copy()
    beta_bar = (1.0 - config.gamma_T) * r
    delta_bar = config.delta_max * r
    gamma_bar = 1.0 - beta_bar

    alpha = np.diff(alpha_bar)
    beta = np.diff(beta_bar)
    delta = np.sqrt(np.maximum(np.diff(delta_bar**2), 0.0))

    for arr in (alpha, beta, delta, alpha_bar, beta_bar, delta_bar, gamma_bar):
        arr.flags.writeable = False
    return SchedulePlan(
        config=config,
        alpha=alpha,
        beta=beta,
        delta=delta,
        alpha_bar=alpha_bar,
        beta_bar=beta_bar,
        delta_bar=delta_bar,
        gamma_bar=gamma_bar,
    )


def coeffs_at(plan: SchedulePlan, t: int) -> tuple[float, float, float, float]:
    """Cumulative coefficients (alpha_bar, beta_bar, delta_bar, gamma_bar) at t."""
    if not 0 <= t <= plan.T:
        raise IndexError(f"timestep {t} outside [0, {plan.T}]")
    return (
        float(plan.alpha_bar[t]),
        float(plan.beta_bar[t]),
        float(plan.delta_bar[t]),
        float(plan.gamma_bar[t]),
    )


def subsample_timesteps(plan: SchedulePlan, k: int) -> list[int]:
    """k+1 strictly decreasing timesteps from T to 0, uniformly spaced.

    Used for few-step sampling: the reverse sampler visits only these
    timesteps instead of all T of them.
    """
    if not 1 <= k <= plan.T:
        raise ValueError(f"step count {k} outside [1, {plan.T}]")
    ts = [int(np.floor(plan.T * i / k + 0.5)) for i in range(k, -1, -1)]
    return ts
