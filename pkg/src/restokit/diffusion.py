"""Forward residual diffusion, the L1 training objective, and the
deterministic few-step reverse sampler.

The forward process transports a clean image toward its degraded
counterpart while injecting Gaussian noise:

    I_t = (alpha_bar_t - beta_bar_t) * I_LQ + (1 - alpha_bar_t) * I_HQ
          + delta_bar_t * eps.

At t = T the clean-image coefficient vanishes, so inference can start from
the degraded input alone.  The reverse sampler converts a predicted
residual R into an HQ estimate I_LQ - R, re-estimates the noise realisation
from the current state, and re-renders the mixture at the earlier timestep
(deterministic, trajectory-consistent stepping).
"""

from dataclasses import dataclass

import numpy as np

from .schedule import SchedulePlan, coeffs_at, subsample_timesteps


@dataclass
class DiffusionState:
    """Current image and its timestep along a diffusion trajectory."""

    image: np.ndarray
    t: int


def _check_shapes(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def residual(i_lq: np.ndarray, i_hq: np.ndarray) -> np.ndarray:
    """Training target R = I_LQ - I_HQ."""
    _check_shapes(i_lq, i_hq)
    return np.asarray(i_lq, dtype=np.float64) - np.asarray(i_hq, dtype=np.float64)


def forward_sample(plan: SchedulePlan, i_hq, i_lq, t: int, noise) -> np.ndarray:
    """Closed-form forward sample I_t from an (HQ, LQ) pair.

    Pass a zero tensor as ``noise`` for the noise-free trajectory.  Works
    on single images or stacked batches; t indexes the plan.
    """
    _check_shapes(i_hq, i_lq, noise)
    ab, bb, db, _ = coeffs_at(plan, t)
    if t == 0:
        return np.array(i_hq, dtype=np.float64, copy=True)
    out = (ab - bb) * np.asarray(i_lq, dtype=np.float64)
    out += (1.0 - ab) * np.asarray(i_hq, dtype=np.float64)
    out += db * np.asarray(noise, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite forward sample at t={t}")
    return out


def forward_step(plan: SchedulePlan, i_prev, i_lq, i_hq, t: int, step_noise) -> np.ndarray:
    """One step of the forward recursion,

        I_t = I_{t-1} + (alpha_t - beta_t) I_LQ - alpha_t I_HQ + delta_t eps.

    Iterating from I_0 = I_HQ telescopes to ``forward_sample``; kept as an
    independent route for consistency checks.
    """
    _check_shapes(i_prev, i_lq, i_hq, step_noise)
    if not 1 <= t <= plan.T:
        raise IndexError(f"timestep {t} outside [1, {plan.T}]")
    a_t = plan.alpha[t - 1]
    b_t = plan.beta[t - 1]
    d_t = plan.delta[t - 1]
    return (
        np.asarray(i_prev, dtype=np.float64)
        + (a_t - b_t) * np.asarray(i_lq, dtype=np.float64)
        - a_t * np.asarray(i_hq, dtype=np.float64)
        + d_t * np.asarray(step_noise, dtype=np.float64)
    )


def training_loss(r_pred, r_true):
    """Mean absolute error between predicted and true residuals.

    Accepts torch tensors (keeps the autograd graph) or numpy arrays
    (returns a float).
    """
    if hasattr(r_pred, "abs") and hasattr(r_pred, "backward"):
        if r_pred.shape != r_true.shape:
            raise ValueError(f"shape mismatch: {tuple(r_pred.shape)} vs {tuple(r_true.shape)}")
        return (r_pred - r_true).abs().mean()
    a = np.asarray(r_pred, dtype=np.float64)
    b = np.asarray(r_true, dtype=np.float64)
    _check_shapes(a, b)
    return float(np.mean(np.abs(a - b)))


def init_inference_state(plan: SchedulePlan, i_lq, noise) -> DiffusionState:
    """Terminal state gamma_bar_T * I_LQ + delta_bar_T * eps.

    No HQ input exists here: the terminal mixture is independent of the
    clean image by construction.
    """
    _check_shapes(i_lq, noise)
    _, _, db, gb = coeffs_at(plan, plan.T)
    image = gb * np.asarray(i_lq, dtype=np.float64) + db * np.asarray(noise, dtype=np.float64)
    return DiffusionState(image=image, t=plan.T)


def reverse_step(plan: SchedulePlan, state: DiffusionState, i_lq, r_hat, t_next: int) -> DiffusionState:
    """Deterministic reverse step from state.t down to t_next.

    Recovers the HQ estimate I_LQ - R_hat, infers the noise realisation
    consistent with the current state, and re-renders the forward mixture
    at t_next with that same noise.
    """
    if t_next >= state.t:
        raise ValueError(f"t_next={t_next} must be below current t={state.t}")
    _check_shapes(state.image, i_lq, r_hat)
    ab, bb, db, _ = coeffs_at(plan, state.t)
    i_lq = np.asarray(i_lq, dtype=np.float64)
    hq_hat = i_lq - np.asarray(r_hat, dtype=np.float64)
    if db > 0.0:
        eps_hat = (state.image - (ab - bb) * i_lq - (1.0 - ab) * hq_hat) / db
    else:
        eps_hat = np.zeros_like(hq_hat)
    ab2, bb2, db2, _ = coeffs_at(plan, t_next)
    image = (ab2 - bb2) * i_lq + (1.0 - ab2) * hq_hat + db2 * eps_hat
    return DiffusionState(image=image, t=t_next)


def sample(plan: SchedulePlan, denoiser, i_lq, steps: int = 4, seed: int = 0) -> np.ndarray:
    """Restore ``i_lq`` with a trained residual predictor.

    Runs the reverse sampler along ``steps`` uniformly subsampled
    timesteps, conditioning the denoiser on (I_t, I_LQ, t).  Deterministic
    given ``seed``; the result is clamped to [0, 1] only at the end.
    """
    i_lq = np.asarray(i_lq, dtype=np.float64)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(i_lq.shape)
    state = init_inference_state(plan, i_lq, noise)
    ts = subsample_timesteps(plan, steps)
    for t_next in ts[1:]:
        r_hat = denoiser.predict(state.image, i_lq, state.t)
        state = reverse_step(plan, state, i_lq, r_hat, t_next)
    return np.clip(state.image, 0.0, 1.0)
