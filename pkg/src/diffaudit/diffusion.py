"""Noise schedules and deterministic DDIM traversal.

All algebra runs in float64 on images shaped (H, W, C) with values
nominally in [-1, 1].  Step indices are 1-based: level 0 is the clean
image, level t carries the noise mixed in by ``forward_noise``.  The
deterministic inversion step :func:`ddim_reverse_step` walks up one
stride (t -> t + dt) and the sampling step :func:`ddim_denoise_step`
walks back down; the pair is an exact algebraic inverse whenever the
noise estimate does not depend on its input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when two image operands disagree in shape."""


def as_image(arr: np.ndarray) -> np.ndarray:
    """Validate and canonicalize an image array to float64 (H, W, C)."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, np.newaxis]
    if a.ndim != 3:
        raise ValueError(f"image must be 2-D or 3-D, got ndim={a.ndim}")
    if min(a.shape) < 1:
        raise ValueError(f"image dimensions must be positive, got shape={a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    return a


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise coefficients: betas, alphas = 1 - betas, and their
    running product alpha_bars.  Index i of each vector belongs to step
    t = i + 1; level 0 (the clean image) has alpha_bar defined as 1.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D vector")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(self.alphas))
        bars = self.alpha_bars
        if bars[-1] <= 0.0 or np.any(np.diff(bars) >= 0.0):
            raise ValueError(
                "alpha_bars must stay positive and strictly decreasing; "
                "the schedule is too long or too aggressive for float64")

    @property
    def total_steps(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at level t; alpha_bar(0) == 1."""
        if not 0 <= t <= self.total_steps:
            raise ValueError(f"step {t} outside [0, {self.total_steps}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def signal_scale(self, t: int) -> float:
        return math.sqrt(self.alpha_bar(t))

    def noise_scale(self, t: int) -> float:
        return math.sqrt(1.0 - self.alpha_bar(t))


def build_linear_schedule(total_steps: int, beta_start: float = 1e-4,
                          beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly interpolated betas, inclusive of both endpoints."""
    if total_steps < 2:
        raise ValueError(f"total_steps must be >= 2, got {total_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, total_steps)
    return NoiseSchedule(betas=betas)


@dataclass(frozen=True)
class TrajectoryConfig:
    """Stride bookkeeping for a k-step traversal of a T-step schedule."""

    total_steps: int
    sampling_steps: int
    attack_step: int

    def __post_init__(self) -> None:
        if self.sampling_steps < 1:
            raise ValueError("sampling_steps must be positive")
        if self.total_steps % self.sampling_steps != 0:
            raise ValueError(
                f"sampling_steps {self.sampling_steps} must divide total_steps {self.total_steps}")
        if not 1 <= self.attack_step <= self.total_steps:
            raise ValueError(
                f"attack_step {self.attack_step} outside [1, {self.total_steps}]")
        if self.attack_step % self.stride != 0:
            raise ValueError(
                f"attack_step {self.attack_step} is not a multiple of stride {self.stride}")

    @property
    def stride(self) -> int:
        return self.total_steps // self.sampling_steps


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray,
                  schedule: NoiseSchedule) -> np.ndarray:
    """Mix Gaussian noise into a clean image at level t:
    sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
    """
    _check_same_shape(x0, eps)
    return schedule.signal_scale(t) * x0 + schedule.noise_scale(t) * eps


def ddim_denoise_step(x_next: np.ndarray, t: int, stride: int, predictor,
                      schedule: NoiseSchedule) -> np.ndarray:
    """One deterministic sampling update from level t + stride down to t.

    The noise estimate is evaluated at the upper level (x_next, t + stride);
    the implied clean image is re-noised to level t with that same estimate.
    """
    t_hi = t + stride
    if t < 0 or stride < 1 or t_hi > schedule.total_steps:
        raise ValueError(
            f"invalid step pair (t={t}, stride={stride}) for T={schedule.total_steps}")
    eps_hat = predictor.predict(x_next, t_hi, schedule)
    _check_same_shape(x_next, eps_hat)
    x0_hat = (x_next - schedule.noise_scale(t_hi) * eps_hat) / schedule.signal_scale(t_hi)
    return schedule.signal_scale(t) * x0_hat + schedule.noise_scale(t) * eps_hat


def ddim_reverse_step(x_cur: np.ndarray, t: int, stride: int, predictor,
                      schedule: NoiseSchedule) -> np.ndarray:
    """One deterministic inversion update from level t up to t + stride.

    Mirror of :func:`ddim_denoise_step` with the indices swapped; the noise
    estimate is evaluated at the lower level (x_cur, t).  The mismatch
    between the two evaluation points is exactly the per-step inversion
    error that membership auditing exploits.
    """
    t_hi = t + stride
    if t < 0 or stride < 1 or t_hi > schedule.total_steps:
        raise ValueError(
            f"invalid step pair (t={t}, stride={stride}) for T={schedule.total_steps}")
    eps_hat = predictor.predict(x_cur, t, schedule)
    _check_same_shape(x_cur, eps_hat)
    x0_hat = (x_cur - schedule.noise_scale(t) * eps_hat) / schedule.signal_scale(t)
    return schedule.signal_scale(t_hi) * x0_hat + schedule.noise_scale(t_hi) * eps_hat


def traverse_to_step(x0: np.ndarray, attack_step: int, stride: int, predictor,
                     schedule: NoiseSchedule) -> np.ndarray:
    """Walk the deterministic inversion from the clean image up to
    attack_step in whole strides, yielding the latent at that level.
    """
    if attack_step == 0:
        return np.array(x0, dtype=np.float64, copy=True)
    if stride < 1 or attack_step % stride != 0:
        raise ValueError(
            f"attack_step {attack_step} not reachable with stride {stride}")
    x = as_image(x0)
    for t in range(0, attack_step, stride):
        x = ddim_reverse_step(x, t, stride, predictor, schedule)
    return x


def reconstruct_at_step(x_t: np.ndarray, attack_step: int, stride: int, predictor,
                        schedule: NoiseSchedule, round_trips: int = 1) -> np.ndarray:
    """Round-trip probe at one level: invert up one stride, sample back down.

    With round_trips > 1 the up/down pair is applied repeatedly; the single
    round trip is the standard attack probe.
    """
    if round_trips < 1:
        raise ValueError("round_trips must be >= 1")
    if attack_step + stride > schedule.total_steps:
        raise ValueError(
            f"round trip at step {attack_step} with stride {stride} exceeds "
            f"T={schedule.total_steps}")
    x = x_t
    for _ in range(round_trips):
        up = ddim_reverse_step(x, attack_step, stride, predictor, schedule)
        x = ddim_denoise_step(up, attack_step, stride, predictor, schedule)
    return x


def reconstruction_error_map(x_t: np.ndarray, x_tilde: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-pixel absolute difference and the Euclidean norm over all pixels."""
    _check_same_shape(x_t, x_tilde)
    diff = x_tilde - x_t
    return np.abs(diff), float(np.sqrt(np.sum(diff * diff)))
