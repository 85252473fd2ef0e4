"""Reference attacks for side-by-side comparison.

Two baselines share the diffusion machinery: the loss-style attack
scores the model's denoising error on freshly noised copies of the
image, and the step-wise reconstruction attack is the frequency-
calibrated pipeline stripped back to a raw full-image residual norm
(no mask, no SSIM, no normalization).
"""

from __future__ import annotations

import zlib

import numpy as np

from .diffusion import (NoiseSchedule, forward_noise, reconstruction_error_map,
                        reconstruct_at_step, traverse_to_step)


def loss_sample_steps(total_steps: int, count: int = 10) -> list[int]:
    """Evenly spaced step indices across [1, T], endpoints included."""
    if count < 1:
        raise ValueError("count must be positive")
    steps = np.unique(np.linspace(1, total_steps, num=count).round().astype(int))
    return [int(t) for t in steps]


def _noise_rng(seed: int, image_key: str, t: int) -> np.random.Generator:
    # Stable per-(image, step) stream: reruns and processing order cannot
    # change the draw.
    return np.random.default_rng([seed, zlib.crc32(image_key.encode("utf-8")), t])


def loss_based_score(x0: np.ndarray, steps: list[int], predictor,
                     schedule: NoiseSchedule, *, seed: int = 0,
                     image_key: str = "") -> float:
    """Mean per-pixel squared denoising error over a fixed set of steps.

    Each step draws its own seeded standard-normal noise, mixes it in,
    and compares the predictor's estimate against the drawn noise.
    Lower means the model denoises this image better, i.e. member-like.
    """
    if not steps:
        raise ValueError("need at least one step index")
    total = 0.0
    for t in steps:
        if not 1 <= t <= schedule.total_steps:
            raise ValueError(f"step {t} outside [1, {schedule.total_steps}]")
        eps = _noise_rng(seed, image_key, t).standard_normal(x0.shape)
        x_t = forward_noise(x0, t, eps, schedule)
        eps_hat = predictor.predict(x_t, t, schedule)
        resid = (eps - eps_hat).ravel()
        total += float(resid @ resid) / resid.size
    return total / len(steps)


def secmi_score(x0: np.ndarray, attack_step: int, stride: int, predictor,
                schedule: NoiseSchedule, round_trips: int = 1) -> float:
    """Step-wise reconstruction error: raw Euclidean norm between the
    latent at the attack step and its round-trip reconstruction, over
    the full image.

    Identical to the calibrated pipeline configured with an all-selected
    mask, the SSIM term disabled, and normalization off.
    """
    x_t = traverse_to_step(x0, attack_step, stride, predictor, schedule)
    x_tilde = reconstruct_at_step(x_t, attack_step, stride, predictor, schedule,
                                  round_trips=round_trips)
    _, norm = reconstruction_error_map(x_t, x_tilde)
    return norm
