"""Laplacian patch scoring and mid-frequency masking.

Patch difficulty is measured on the original image: the discrete
Laplacian response is squared and summed per patch, patches whose score
falls outside a per-image percentile band are dropped, and the surviving
binary mask is applied to both the latent and its reconstruction.  The
mask depends only on the clean image, never on the diffusion traversal,
so it calibrates for how hard each region is rather than for how well
it was reconstructed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import ShapeMismatchError, as_image

LAPLACIAN_SUM_SQUARED = "sum_squared"
LAPLACIAN_MEAN_ABS = "mean_abs"


class EmptyMaskError(ValueError):
    """No patch survived the threshold band."""


@dataclass(frozen=True)
class ThresholdBand:
    """Percentile band [l_min, l_max] defining the kept mid-frequency range."""

    l_min: float
    l_max: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.l_min < 100.0:
            raise ValueError(f"l_min must lie in [0, 100), got {self.l_min}")
        if not 0.0 < self.l_max <= 100.0:
            raise ValueError(f"l_max must lie in (0, 100], got {self.l_max}")
        if self.l_min >= self.l_max:
            raise ValueError(f"need l_min < l_max, got ({self.l_min}, {self.l_max})")


@dataclass(frozen=True)
class PatchGrid:
    """Square patch tiling of an image plane."""

    patch_size: int

    def __post_init__(self) -> None:
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be positive, got {self.patch_size}")

    def grid_shape(self, height: int, width: int) -> tuple[int, int]:
        p = self.patch_size
        if height % p != 0 or width % p != 0:
            raise ValueError(
                f"image {height}x{width} is not divisible by patch size {p}")
        return height // p, width // p


@dataclass(frozen=True)
class FrequencyMask:
    """Per-patch keep/drop flags plus the patch size they tile with."""

    flags: np.ndarray  # boolean (grid_h, grid_w)
    patch_size: int

    def __post_init__(self) -> None:
        flags = np.asarray(self.flags, dtype=bool)
        if flags.ndim != 2:
            raise ValueError("mask flags must form a 2-D grid")
        object.__setattr__(self, "flags", flags)

    @property
    def selected_count(self) -> int:
        return int(self.flags.sum())

    @property
    def total_count(self) -> int:
        return int(self.flags.size)


def luminance(image: np.ndarray) -> np.ndarray:
    """Equal-weight channel mean, squeezing (H, W, C) to (H, W)."""
    img = as_image(image)
    return img.mean(axis=2)


def laplacian_response(image: np.ndarray) -> np.ndarray:
    """4-neighbor discrete Laplacian with replicated borders.

    Multi-channel input is reduced to luminance first; the response is
    zero wherever the image is locally affine.
    """
    gray = luminance(image)
    padded = np.pad(gray, 1, mode="edge")
    return (padded[:-2, 1:-1] + padded[2:, 1:-1]
            + padded[1:-1, :-2] + padded[1:-1, 2:]
            - 4.0 * gray)


def patch_scores(response: np.ndarray, grid: PatchGrid,
                 mode: str = LAPLACIAN_SUM_SQUARED) -> np.ndarray:
    """Reduce a per-pixel response map to one difficulty score per patch.

    The default sums squared responses over the patch; ``mean_abs``
    averages absolute responses instead.  Both are non-negative and
    nearly rank-equivalent under percentile thresholding.
    """
    resp = np.asarray(response, dtype=np.float64)
    if resp.ndim != 2:
        raise ValueError(f"response map must be 2-D, got ndim={resp.ndim}")
    gh, gw = grid.grid_shape(*resp.shape)
    p = grid.patch_size
    tiles = resp.reshape(gh, p, gw, p)
    if mode == LAPLACIAN_SUM_SQUARED:
        return (tiles * tiles).sum(axis=(1, 3))
    if mode == LAPLACIAN_MEAN_ABS:
        return np.abs(tiles).mean(axis=(1, 3))
    raise ValueError(f"unknown Laplacian scoring mode {mode!r}")


def build_mask(scores: np.ndarray, band: ThresholdBand, patch_size: int) -> FrequencyMask:
    """Keep patches whose score lies inside the per-image percentile band.

    Thresholds are linear-interpolation percentiles of this image's own
    score distribution, boundary ties included; a fully degenerate
    distribution keeps every patch.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 1:
        raise ValueError("need at least one patch score")
    lo, hi = np.percentile(scores, [band.l_min, band.l_max])
    flags = (scores >= lo) & (scores <= hi)
    return FrequencyMask(flags=flags, patch_size=patch_size)


def mask_from_image(image: np.ndarray, band: ThresholdBand, grid: PatchGrid,
                    mode: str = LAPLACIAN_SUM_SQUARED) -> FrequencyMask:
    """Full scoring chain: Laplacian response -> patch scores -> band mask."""
    return build_mask(patch_scores(laplacian_response(image), grid, mode),
                      band, grid.patch_size)


def full_mask(image: np.ndarray, grid: PatchGrid) -> FrequencyMask:
    """All-selected mask matching the image's patch grid."""
    gh, gw = grid.grid_shape(*as_image(image).shape[:2])
    return FrequencyMask(flags=np.ones((gh, gw), dtype=bool), patch_size=grid.patch_size)


def apply_mask(image: np.ndarray, mask: FrequencyMask) -> np.ndarray:
    """Zero out every deselected patch across all channels."""
    img = as_image(image)
    gh, gw = mask.flags.shape
    p = mask.patch_size
    if img.shape[0] != gh * p or img.shape[1] != gw * p:
        raise ShapeMismatchError(
            f"mask grid {gh}x{gw} (patch {p}) does not tile image "
            f"{img.shape[0]}x{img.shape[1]}")
    pixel_flags = np.repeat(np.repeat(mask.flags, p, axis=0), p, axis=1)
    return img * pixel_flags[:, :, np.newaxis]


def write_mask_image(mask: FrequencyMask, path: str | Path) -> None:
    """Export the mask as a portable graymap, one pixel per patch (0/255)."""
    from PIL import Image

    data = np.where(mask.flags, 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(str(path), format="PPM")


def write_score_dump(scores: np.ndarray, path: str | Path) -> None:
    """Plain-text per-patch scores: one "row col score" line per patch."""
    scores = np.asarray(scores, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for r in range(scores.shape[0]):
            for c in range(scores.shape[1]):
                fh.write(f"{r} {c} {float(scores[r, c])!r}\n")
