"""Structural similarity, masked reconstruction distance, and the
combined per-image membership score.

Both metrics run over the same patch grid as the frequency mask: SSIM is
averaged over selected patches (per channel, then across channels) and
the L2 term is the Euclidean norm over selected pixels, optionally
root-mean-square normalized so scores stay comparable when masks differ
in size.  The final score is (1 - SSIM) + L2; lower means the
reconstruction came back closer, i.e. more member-like.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .diffusion import ShapeMismatchError, as_image
from .frequency import EmptyMaskError, FrequencyMask, full_mask, PatchGrid


@dataclass(frozen=True)
class SsimParams:
    """Stabilizing constants; conventionally (0.01 R)^2 and (0.03 R)^2
    for dynamic range R."""

    c1: float
    c2: float

    def __post_init__(self) -> None:
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("SSIM constants must be positive")

    @classmethod
    def from_dynamic_range(cls, dynamic_range: float = 2.0,
                           k1: float = 0.01, k2: float = 0.03) -> "SsimParams":
        if dynamic_range <= 0:
            raise ValueError(f"dynamic_range must be positive, got {dynamic_range}")
        return cls(c1=(k1 * dynamic_range) ** 2, c2=(k2 * dynamic_range) ** 2)


@dataclass(frozen=True)
class ScoreRecord:
    """One image's attack evidence."""

    image_id: str
    label: str                 # member / nonmember / unknown
    ssim_term: float           # 1 - mean patch SSIM, in [0, 2]
    l2_term: float
    mia_score: float
    selected_patches: int
    fallback: bool = False     # scored on the full image after an empty mask
    attack: str = "fcre"

    def to_json_line(self) -> str:
        payload = {
            "id": self.image_id,
            "label": self.label,
            "attack": self.attack,
            "ssim_term": self.ssim_term,
            "l2_term": self.l2_term,
            "mia_score": self.mia_score,
            "selected_patches": self.selected_patches,
            "fallback": self.fallback,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json_line(cls, line: str) -> "ScoreRecord":
        d = json.loads(line)
        return cls(image_id=d["id"], label=d["label"], ssim_term=d["ssim_term"],
                   l2_term=d["l2_term"], mia_score=d["mia_score"],
                   selected_patches=d["selected_patches"],
                   fallback=d["fallback"], attack=d["attack"])


def ssim_patch(p: np.ndarray, p_tilde: np.ndarray, params: SsimParams) -> float:
    """Structural similarity of two flat patches from sample statistics.

    Means, variances and the covariance all use the 1/N convention; the
    constants keep the ratio finite for constant patches.  Exactly
    symmetric in its arguments.
    """
    a = np.asarray(p, dtype=np.float64).ravel()
    b = np.asarray(p_tilde, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ShapeMismatchError(f"patch sizes differ: {a.size} vs {b.size}")
    mu_a = a.mean()
    mu_b = b.mean()
    da = a - mu_a
    db = b - mu_b
    var_a = (da * da).mean()
    var_b = (db * db).mean()
    cov = (da * db).mean()
    num = (2.0 * mu_a * mu_b + params.c1) * (2.0 * cov + params.c2)
    den = (mu_a * mu_a + mu_b * mu_b + params.c1) * (var_a + var_b + params.c2)
    return num / den


def _iter_selected_patches(x: np.ndarray, mask: FrequencyMask):
    p = mask.patch_size
    rows, cols = np.nonzero(mask.flags)
    for r, c in zip(rows, cols):
        yield x[r * p:(r + 1) * p, c * p:(c + 1) * p, :]


def aggregate_ssim(x_masked: np.ndarray, x_tilde_masked: np.ndarray,
                   mask: FrequencyMask, params: SsimParams) -> float:
    """Unweighted mean patch SSIM over the selected patches.

    Multi-channel patches contribute the mean of their per-channel SSIM.
    Raises EmptyMaskError when the mask selects nothing.
    """
    a = as_image(x_masked)
    b = as_image(x_tilde_masked)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mask.selected_count == 0:
        raise EmptyMaskError("no patches selected")
    values = []
    for pa, pb in zip(_iter_selected_patches(a, mask), _iter_selected_patches(b, mask)):
        channels = [ssim_patch(pa[:, :, ch], pb[:, :, ch], params)
                    for ch in range(pa.shape[2])]
        values.append(sum(channels) / len(channels))
    return float(np.mean(values))


def masked_l2(x_masked: np.ndarray, x_tilde_masked: np.ndarray,
              mask: FrequencyMask, normalize: bool = True) -> float:
    """Euclidean norm of the reconstruction residual over selected pixels.

    With ``normalize`` the norm is divided by sqrt(selected pixel count),
    i.e. the root-mean-square residual.
    """
    a = as_image(x_masked)
    b = as_image(x_tilde_masked)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mask.selected_count == 0:
        raise EmptyMaskError("no patches selected")
    total = 0.0
    for pa, pb in zip(_iter_selected_patches(a, mask), _iter_selected_patches(b, mask)):
        diff = (pa - pb).ravel()
        total += float(diff @ diff)
    norm = math.sqrt(total)
    if normalize:
        norm /= math.sqrt(mask.selected_count * mask.patch_size ** 2 * a.shape[2])
    return norm


def mia_score(x_t: np.ndarray, x_tilde_t: np.ndarray, mask: FrequencyMask,
              params: SsimParams, *, image_id: str = "", label: str = "unknown",
              normalize: bool = True, use_ssim: bool = True,
              attack: str = "fcre") -> ScoreRecord:
    """Score one image's round trip under a precomputed frequency mask.

    An empty mask falls back to the full image and flags the record
    instead of dropping the sample, which would bias the evaluation set.
    """
    a = as_image(x_t)
    b = as_image(x_tilde_t)
    fallback = mask.selected_count == 0
    if fallback:
        mask = full_mask(a, PatchGrid(mask.patch_size))
    if use_ssim:
        # Rounding can leave the mean SSIM an ulp above 1; the exact
        # value of the distance term is >= 0, so pin it there.
        ssim_term = max(0.0, 1.0 - aggregate_ssim(a, b, mask, params))
    else:
        ssim_term = 0.0
    l2_term = masked_l2(a, b, mask, normalize=normalize)
    return ScoreRecord(
        image_id=image_id,
        label=label,
        ssim_term=ssim_term,
        l2_term=l2_term,
        mia_score=ssim_term + l2_term,
        selected_patches=mask.selected_count,
        fallback=fallback,
        attack=attack,
    )
