"""Dataset manifests and raster ingestion.

A manifest is a delimited text file with one ``path,label`` pair per
line; labels are ``member`` or ``nonmember`` and paths resolve relative
to the manifest's directory.  Images are 8- or 16-bit grayscale or
color rasters, decoded to float64 and affinely normalized to [-1, 1]
over the full bit depth.  Every problem is reported with its manifest
line number, and mixed resolutions are rejected outright.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

MEMBER = "member"
NONMEMBER = "nonmember"
_LABELS = (MEMBER, NONMEMBER)


class DataError(Exception):
    """Manifest or image problems; maps to CLI exit code 2."""


@dataclass(frozen=True)
class DatasetEntry:
    image_id: str
    path: Path
    label: str
    pixels: np.ndarray  # (H, W, C) float64 in [-1, 1]


@dataclass(frozen=True)
class DatasetManifest:
    entries: list[DatasetEntry]
    resolution: tuple[int, int]
    channels: int
    modality: str = ""

    @property
    def members(self) -> list[DatasetEntry]:
        return [e for e in self.entries if e.label == MEMBER]

    @property
    def nonmembers(self) -> list[DatasetEntry]:
        return [e for e in self.entries if e.label == NONMEMBER]

    def require_both_labels(self) -> None:
        if not self.members or not self.nonmembers:
            raise DataError(
                "evaluation needs both member and nonmember entries; got "
                f"{len(self.members)} members, {len(self.nonmembers)} nonmembers")


def normalize_pixels(raw: np.ndarray) -> np.ndarray:
    """Map integer pixel values onto [-1, 1] over the dtype's full range."""
    if raw.dtype == np.uint8:
        full = 255.0
    elif raw.dtype == np.uint16 or raw.dtype == np.int32:
        # Pillow hands 16-bit grayscale back as int32 ("I" mode).
        full = 65535.0
    else:
        raise DataError(f"unsupported pixel dtype {raw.dtype}")
    return raw.astype(np.float64) / full * 2.0 - 1.0


def load_image(path: Path, luminance_only: bool = False) -> np.ndarray:
    """Decode one raster file to a normalized (H, W, C) array."""
    try:
        with Image.open(path) as img:
            if img.mode in ("I;16", "I;16B", "I;16L"):
                img = img.convert("I")
            elif img.mode == "P":
                img = img.convert("RGB")
            raw = np.asarray(img)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    data = normalize_pixels(raw)
    if data.ndim == 2:
        data = data[:, :, np.newaxis]
    if data.ndim != 3:
        raise DataError(f"unsupported image layout in {path}: shape {raw.shape}")
    if luminance_only and data.shape[2] > 1:
        data = data.mean(axis=2, keepdims=True)
    return data


def parse_manifest_lines(lines: list[str], base_dir: Path) -> list[tuple[int, Path, str]]:
    """Validate manifest text into (line number, path, label) triples."""
    rows: list[tuple[int, Path, str]] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2:
            raise DataError(
                f"manifest line {lineno}: expected 'path,label', got {text!r}")
        rel, label = parts
        if label not in _LABELS:
            raise DataError(
                f"manifest line {lineno}: unknown label {label!r} "
                f"(expected one of {', '.join(_LABELS)})")
        if rel in seen:
            raise DataError(
                f"manifest line {lineno}: duplicate path {rel!r} "
                f"(first seen on line {seen[rel]})")
        seen[rel] = lineno
        rows.append((lineno, base_dir / rel, label))
    if not rows:
        raise DataError("manifest contains no entries")
    return rows


def ingest(manifest_path: str | Path, luminance_only: bool = False) -> DatasetManifest:
    """Load a manifest and all images it references.

    Enforces uniform resolution and channel count across the dataset.
    """
    manifest_path = Path(manifest_path)
    try:
        lines = manifest_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    rows = parse_manifest_lines(lines, manifest_path.parent)

    entries: list[DatasetEntry] = []
    resolution: tuple[int, int] | None = None
    channels: int | None = None
    for lineno, path, label in rows:
        try:
            pixels = load_image(path, luminance_only=luminance_only)
        except DataError as exc:
            raise DataError(f"manifest line {lineno}: {exc}") from exc
        shape = (pixels.shape[0], pixels.shape[1])
        if resolution is None:
            resolution = shape
            channels = pixels.shape[2]
        elif shape != resolution or pixels.shape[2] != channels:
            raise DataError(
                f"manifest line {lineno}: image {path} is "
                f"{shape[0]}x{shape[1]}x{pixels.shape[2]}, dataset started as "
                f"{resolution[0]}x{resolution[1]}x{channels}")
        image_id = str(path.relative_to(manifest_path.parent)
                       if path.is_relative_to(manifest_path.parent) else path)
        entries.append(DatasetEntry(image_id=image_id, path=path, label=label,
                                    pixels=pixels))
    assert resolution is not None and channels is not None
    kind = "grayscale" if channels == 1 else f"{channels}-channel color"
    modality = f"{kind} {resolution[0]}x{resolution[1]}"
    return DatasetManifest(entries=entries, resolution=resolution,
                           channels=channels, modality=modality)


def write_image(pixels: np.ndarray, path: str | Path) -> None:
    """Encode a [-1, 1] float image as an 8-bit raster file."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    data = np.clip((arr + 1.0) / 2.0 * 255.0, 0.0, 255.0).round().astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(str(path))
