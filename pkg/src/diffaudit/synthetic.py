"""Synthetic textured benchmark for desk-scale audit verification.

Every image combines a smooth background, oriented mid-frequency waves
that carry its identity, and a few high-frequency texture blobs.  The
blob positions are shared across the whole distribution (think of them
as anatomy: fine detail sits in roughly the same places in every scan)
while each image draws its own blob amplitude from a heavy-tailed
distribution.  That spread makes some images intrinsically much harder
to reconstruct than others regardless of membership, which is exactly
the confound the frequency mask is supposed to remove.  Members double
as the memorizing predictor's bank, standing in for a model that
overfit its training set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import AuditConfig, load_config
from .diffusion import NoiseSchedule, reconstruct_at_step, traverse_to_step
from .ingest import MEMBER, NONMEMBER, DatasetEntry, DatasetManifest
from .predictors import MemorizingPredictor

# Texture-blob amplitude distribution; the wide lognormal is the
# difficulty confound.
_BLOB_AMP_MEDIAN = 0.7
_BLOB_AMP_SIGMA = 1.4
_BLOB_AMP_CAP = 1.6
_IDENTITY_AMP = (0.15, 0.35)


def make_layout(seed: int, blobs: int = 3) -> list[tuple[float, float, float]]:
    """Shared (center_y, center_x, width) triples for the texture blobs."""
    r = np.random.default_rng([seed, 0xA11])
    return [(float(r.uniform(0.2, 0.8)), float(r.uniform(0.2, 0.8)),
             float(r.uniform(0.04, 0.075))) for _ in range(blobs)]


def textured_image(rng: np.random.Generator, size: int = 32,
                   layout: list[tuple[float, float, float]] | None = None,
                   ) -> np.ndarray:
    """One sample of the benchmark distribution, (size, size, 1) in [-1, 1]."""
    if layout is None:
        layout = make_layout(0)
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    img = np.zeros((size, size), dtype=np.float64)

    # Smooth background: gentle bumps plus a tilt.
    for _ in range(2):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        sigma = rng.uniform(0.25, 0.45)
        amp = rng.uniform(-0.35, 0.35)
        img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma ** 2))
    gx, gy = rng.uniform(-0.2, 0.2, size=2)
    img += gx * (xx - 0.5) + gy * (yy - 0.5)

    # Mid-frequency identity: oriented waves, the discriminative part.
    for _ in range(3):
        freq = rng.uniform(2.0, 5.0)
        theta = rng.uniform(0.0, math.pi)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amp = rng.uniform(*_IDENTITY_AMP)
        carrier = xx * math.cos(theta) + yy * math.sin(theta)
        img += amp * np.sin(2.0 * math.pi * freq * carrier + phase)

    # High-frequency texture at the shared positions, with per-image
    # amplitude, phase, orientation and carrier frequency.
    for cy, cx, width in layout:
        freq = rng.uniform(9.0, 14.0)
        theta = rng.uniform(0.0, math.pi)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amp = min(_BLOB_AMP_CAP,
                  rng.lognormal(mean=math.log(_BLOB_AMP_MEDIAN),
                                sigma=_BLOB_AMP_SIGMA))
        window = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * width ** 2))
        carrier = xx * math.cos(theta) + yy * math.sin(theta)
        img += amp * window * np.sin(2.0 * math.pi * freq * carrier + phase)

    return np.clip(img, -1.0, 1.0)[:, :, np.newaxis]


@dataclass(frozen=True)
class SyntheticBenchmark:
    """Clean populations plus the (possibly noisy) audit inputs."""

    members: list[np.ndarray]        # clean; these form the predictor bank
    nonmembers: list[np.ndarray]
    audit_members: list[np.ndarray]  # what the auditor actually sees
    audit_nonmembers: list[np.ndarray]
    noise_amplitude: float
    seed: int

    def dataset(self) -> DatasetManifest:
        entries = []
        for i, img in enumerate(self.audit_members):
            entries.append(DatasetEntry(
                image_id=f"member/{i:04d}", path=Path(f"synthetic/member_{i:04d}"),
                label=MEMBER, pixels=img))
        for i, img in enumerate(self.audit_nonmembers):
            entries.append(DatasetEntry(
                image_id=f"nonmember/{i:04d}",
                path=Path(f"synthetic/nonmember_{i:04d}"),
                label=NONMEMBER, pixels=img))
        h, w, c = self.audit_members[0].shape
        return DatasetManifest(entries=entries, resolution=(h, w), channels=c)


def make_benchmark(n_member: int = 256, n_nonmember: int = 256, size: int = 32,
                   seed: int = 0, noise_amplitude: float = 0.0) -> SyntheticBenchmark:
    """Draw both populations from one distribution and optionally add
    i.i.d. per-pixel Gaussian noise to the audit inputs."""
    layout = make_layout(seed)
    rng = np.random.default_rng([seed, 0xD1F])
    members = [textured_image(rng, size, layout) for _ in range(n_member)]
    nonmembers = [textured_image(rng, size, layout) for _ in range(n_nonmember)]

    def degrade(images: list[np.ndarray]) -> list[np.ndarray]:
        if noise_amplitude == 0.0:
            return [img.copy() for img in images]
        return [np.clip(img + noise_amplitude * rng.standard_normal(img.shape),
                        -1.0, 1.0) for img in images]

    return SyntheticBenchmark(members=members, nonmembers=nonmembers,
                              audit_members=degrade(members),
                              audit_nonmembers=degrade(nonmembers),
                              noise_amplitude=noise_amplitude, seed=seed)


def benchmark_config(**overrides) -> AuditConfig:
    """Audit settings the benchmark is calibrated for.

    A short traversal keeps the round-trip error localized, which is
    where the memorizing predictor separates best.
    """
    settings = dict(predictor="memorizing", attack_step=30)
    settings.update(overrides)
    return load_config(None, **settings)


def roundtrip_rms(image: np.ndarray, config: AuditConfig,
                  predictor: MemorizingPredictor,
                  schedule: NoiseSchedule) -> float:
    x_t = traverse_to_step(image, config.attack_step, config.stride,
                           predictor, schedule)
    x_tilde = reconstruct_at_step(x_t, config.attack_step, config.stride,
                                  predictor, schedule)
    diff = (x_tilde - x_t).ravel()
    return math.sqrt(float(diff @ diff) / diff.size)


def tune_temperature(benchmark: SyntheticBenchmark, config: AuditConfig,
                     target_ratio: float = 0.5, probe_count: int = 24,
                     ) -> tuple[float, float]:
    """Pick the softmin temperature whose member/nonmember round-trip RMS
    ratio lands on the target.

    Coarse log grid to bracket the target, then bisection on log
    temperature; the ratio rises monotonically from near zero (perfectly
    anchored members) toward one (blend so broad that membership stops
    mattering) across the bracketed region.  Probes use a fixed-size
    prefix of each population, so the search is deterministic and cheap
    relative to the full audit.
    """
    schedule = config.schedule()
    probe_m = benchmark.audit_members[:probe_count]
    probe_n = benchmark.audit_nonmembers[:probe_count]

    def ratio_at(tau: float) -> float:
        predictor = MemorizingPredictor(benchmark.members, tau)
        rms_m = np.mean([roundtrip_rms(x, config, predictor, schedule)
                         for x in probe_m])
        rms_n = np.mean([roundtrip_rms(x, config, predictor, schedule)
                         for x in probe_n])
        if rms_n <= 0.0:
            return 0.0
        return float(rms_m / rms_n)

    taus = np.geomspace(0.005, 0.5, 14)
    ratios = [ratio_at(float(t)) for t in taus]
    gaps = [abs(math.log(max(r, 1e-9) / target_ratio)) for r in ratios]
    pivot = int(np.argmin(gaps))
    lo = float(taus[max(pivot - 1, 0)])
    hi = float(taus[min(pivot + 1, len(taus) - 1)])
    for _ in range(10):
        mid = math.sqrt(lo * hi)
        if ratio_at(mid) < target_ratio:
            lo = mid
        else:
            hi = mid
    tau = math.sqrt(lo * hi)
    return tau, ratio_at(tau)


def write_benchmark(benchmark: SyntheticBenchmark, out_dir: str | Path) -> Path:
    """Write audit images, the audit manifest, and a clean bank manifest.

    Images go out as 16-bit graymaps so the round trip through disk stays
    within ingestion quantization of the in-memory arrays.
    """
    from PIL import Image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "bank").mkdir(parents=True, exist_ok=True)

    def save16(pixels: np.ndarray, path: Path) -> None:
        flat = pixels[:, :, 0] if pixels.shape[2] == 1 else pixels.mean(axis=2)
        raw = np.clip((flat + 1.0) / 2.0 * 65535.0, 0.0, 65535.0).round()
        Image.fromarray(raw.astype(np.uint16)).save(str(path))

    audit_lines = []
    for i, img in enumerate(benchmark.audit_members):
        rel = f"images/member_{i:04d}.png"
        save16(img, out / rel)
        audit_lines.append(f"{rel},{MEMBER}")
    for i, img in enumerate(benchmark.audit_nonmembers):
        rel = f"images/nonmember_{i:04d}.png"
        save16(img, out / rel)
        audit_lines.append(f"{rel},{NONMEMBER}")
    (out / "manifest.csv").write_text("\n".join(audit_lines) + "\n",
                                      encoding="utf-8")

    bank_lines = []
    for i, img in enumerate(benchmark.members):
        rel = f"bank/member_{i:04d}.png"
        save16(img, out / rel)
        bank_lines.append(f"{rel},{MEMBER}")
    (out / "bank_manifest.csv").write_text("\n".join(bank_lines) + "\n",
                                           encoding="utf-8")
    return out / "manifest.csv"
