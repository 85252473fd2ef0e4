"""End-to-end audit orchestration.

For every image the pipeline walks the deterministic inversion to the
attack step, probes one round trip, builds the frequency mask from the
clean image, and scores the reconstruction.  Per-image failures are
quarantined rather than aborting the run (the run fails only when more
than one percent of the manifest is lost), and the whole flow is a pure
function of (config, dataset, predictor), so identical seeds reproduce
byte-identical records.

Ablation grids reuse reconstructions across threshold cells: the mask is
applied after the round trip and never feeds back into the traversal,
so only the scoring stage needs to be recomputed per cell.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .baselines import loss_based_score, loss_sample_steps, secmi_score
from .config import (ATTACK_FCRE, ATTACK_LOSS, ATTACK_SECMI, AuditConfig,
                     build_predictor)
from .diffusion import (NoiseSchedule, reconstruct_at_step,
                        reconstruction_error_map, traverse_to_step)
from .evaluation import AttackReport, ScoreSet, evaluate
from .frequency import PatchGrid, mask_from_image
from .ingest import MEMBER, DatasetEntry, DatasetManifest
from .predictors import ExternalPredictor, NoisePredictor
from .similarity import ScoreRecord, mia_score

log = logging.getLogger(__name__)


class PipelineError(Exception):
    """The run lost too many images to continue meaningfully."""


@dataclass(frozen=True)
class Reconstruction:
    """Cached round-trip artifacts for one image."""

    entry: DatasetEntry
    x_t: np.ndarray
    x_tilde: np.ndarray


@dataclass(frozen=True)
class AuditResult:
    report: AttackReport
    records: list[ScoreRecord]
    quarantined: list[tuple[str, str]]  # (image id, reason)


def _predictor_for_worker(predictor: NoisePredictor) -> NoisePredictor:
    # The external client allows one in-flight request per connection;
    # give each worker its own.  Built-ins are pure and shareable.
    if isinstance(predictor, ExternalPredictor):
        return predictor.clone()
    return predictor


def _map_images(entries: list[DatasetEntry], fn, workers: int,
                predictor: NoisePredictor) -> list:
    if workers <= 1 or len(entries) <= 1:
        return [fn(e, predictor) for e in entries]
    clones = [_predictor_for_worker(predictor) for _ in range(workers)]
    results: list = [None] * len(entries)

    def run(idx_entry):
        idx, entry = idx_entry
        return idx, fn(entry, clones[idx % workers])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for idx, value in pool.map(run, enumerate(entries)):
            results[idx] = value
    return results


def compute_reconstruction(entry: DatasetEntry, config: AuditConfig,
                           predictor: NoisePredictor,
                           schedule: NoiseSchedule) -> Reconstruction:
    x_t = traverse_to_step(entry.pixels, config.attack_step, config.stride,
                           predictor, schedule)
    x_tilde = reconstruct_at_step(x_t, config.attack_step, config.stride,
                                  predictor, schedule, round_trips=config.round_trips)
    return Reconstruction(entry=entry, x_t=x_t, x_tilde=x_tilde)


def score_reconstruction(recon: Reconstruction, config: AuditConfig) -> ScoreRecord:
    """Mask from the clean image, then score latent vs reconstruction."""
    grid = PatchGrid(config.patch_size)
    mask = mask_from_image(recon.entry.pixels, config.band(), grid,
                           mode=config.laplacian_mode)
    return mia_score(recon.x_t, recon.x_tilde, mask, config.ssim_params(),
                     image_id=recon.entry.image_id, label=recon.entry.label,
                     normalize=config.l2_normalize, use_ssim=config.use_ssim,
                     attack=ATTACK_FCRE)


def _quarantine_guard(total: int, quarantined: list[tuple[str, str]]) -> None:
    if quarantined and len(quarantined) > 0.01 * total:
        detail = "; ".join(f"{name}: {reason}" for name, reason in quarantined[:5])
        raise PipelineError(
            f"{len(quarantined)} of {total} images failed (> 1% budget): {detail}")


def _collect(entries: list[DatasetEntry], config: AuditConfig,
             predictor: NoisePredictor, schedule: NoiseSchedule,
             worker_fn) -> tuple[list, list[tuple[str, str]]]:
    def guarded(entry: DatasetEntry, pred: NoisePredictor):
        try:
            return worker_fn(entry, pred)
        except Exception as exc:  # noqa: BLE001 - quarantine any per-image failure
            log.warning("quarantined %s: %s", entry.image_id, exc)
            return (entry.image_id, f"{type(exc).__name__}: {exc}")

    outputs = _map_images(entries, guarded, config.workers, predictor)
    good = [o for o in outputs if not isinstance(o, tuple)]
    bad = [o for o in outputs if isinstance(o, tuple)]
    _quarantine_guard(len(entries), bad)
    return good, bad


def compute_reconstructions(dataset: DatasetManifest, config: AuditConfig,
                            predictor: NoisePredictor, schedule: NoiseSchedule,
                            ) -> tuple[list[Reconstruction], list[tuple[str, str]]]:
    def work(entry: DatasetEntry, pred: NoisePredictor) -> Reconstruction:
        return compute_reconstruction(entry, config, pred, schedule)

    return _collect(dataset.entries, config, predictor, schedule, work)


def _score_records(recons: list[Reconstruction],
                   config: AuditConfig) -> list[ScoreRecord]:
    if config.attack == ATTACK_FCRE:
        return [score_reconstruction(r, config) for r in recons]
    if config.attack == ATTACK_SECMI:
        records = []
        for r in recons:
            _, norm = _secmi_from_cache(r)
            records.append(ScoreRecord(
                image_id=r.entry.image_id, label=r.entry.label,
                ssim_term=0.0, l2_term=norm, mia_score=norm,
                selected_patches=_total_patches(r, config),
                fallback=False, attack=ATTACK_SECMI))
        return records
    raise ValueError(f"attack {config.attack!r} does not score reconstructions")


def _secmi_from_cache(recon: Reconstruction) -> tuple[np.ndarray, float]:
    return reconstruction_error_map(recon.x_t, recon.x_tilde)


def _total_patches(recon: Reconstruction, config: AuditConfig) -> int:
    h, w = recon.entry.pixels.shape[:2]
    gh, gw = PatchGrid(config.patch_size).grid_shape(h, w)
    return gh * gw


def _evaluate_records(records: list[ScoreRecord], config: AuditConfig,
                      quarantined: list[tuple[str, str]]) -> AuditResult:
    member = [r.mia_score for r in records if r.label == MEMBER]
    nonmember = [r.mia_score for r in records if r.label != MEMBER]
    if not member or not nonmember:
        raise PipelineError("both member and nonmember records are required "
                            "for evaluation")
    scores = ScoreSet(member=np.asarray(member), nonmember=np.asarray(nonmember))
    report = evaluate(scores, attack=config.attack, bins=config.histogram_bins,
                      fpr_target=config.fpr_target,
                      balanced_asr=config.balanced_asr,
                      n_quarantined=len(quarantined),
                      n_fallback=sum(1 for r in records if r.fallback),
                      config=config.to_dict())
    return AuditResult(report=report, records=records, quarantined=quarantined)


def run_audit(config: AuditConfig, dataset: DatasetManifest,
              predictor: NoisePredictor | None = None) -> AuditResult:
    """Audit a labeled dataset end to end and aggregate attack metrics."""
    config = config.validate()
    dataset.require_both_labels()
    _check_patch_fit(dataset, config)
    schedule = config.schedule()
    if predictor is None:
        predictor = build_predictor(config, dataset)

    if config.attack == ATTACK_LOSS:
        steps = loss_sample_steps(config.total_steps, config.loss_steps)

        def work(entry: DatasetEntry, pred: NoisePredictor) -> ScoreRecord:
            score = loss_based_score(entry.pixels, steps, pred, schedule,
                                     seed=config.seed, image_key=entry.image_id)
            return ScoreRecord(image_id=entry.image_id, label=entry.label,
                               ssim_term=0.0, l2_term=score, mia_score=score,
                               selected_patches=0, fallback=False,
                               attack=ATTACK_LOSS)

        records, quarantined = _collect(dataset.entries, config, predictor,
                                        schedule, work)
        return _evaluate_records(records, config, quarantined)

    recons, quarantined = compute_reconstructions(dataset, config, predictor,
                                                  schedule)
    records = _score_records(recons, config)
    return _evaluate_records(records, config, quarantined)


def run_ablation(config: AuditConfig, dataset: DatasetManifest,
                 grid: list[tuple[float, float]] | None = None,
                 predictor: NoisePredictor | None = None,
                 ) -> dict[tuple[float, float], AuditResult]:
    """Audit once per threshold band, reusing reconstructions across cells."""
    config = config.validate()
    if config.attack != ATTACK_FCRE:
        raise ValueError("threshold ablation only applies to the "
                         "frequency-calibrated attack")
    dataset.require_both_labels()
    _check_patch_fit(dataset, config)
    if grid is None:
        grid = DEFAULT_ABLATION_GRID
    schedule = config.schedule()
    if predictor is None:
        predictor = build_predictor(config, dataset)
    recons, quarantined = compute_reconstructions(dataset, config, predictor,
                                                  schedule)
    results: dict[tuple[float, float], AuditResult] = {}
    for l_min, l_max in grid:
        cell_config = replace(config, l_min=l_min, l_max=l_max).validate()
        records = _score_records(recons, cell_config)
        results[(l_min, l_max)] = _evaluate_records(records, cell_config,
                                                    quarantined)
    return results


DEFAULT_ABLATION_GRID: list[tuple[float, float]] = [
    (0.0, 100.0),
    (15.0, 85.0),
    (15.0, 100.0),
    (0.0, 85.0),
]


def _check_patch_fit(dataset: DatasetManifest, config: AuditConfig) -> None:
    h, w = dataset.resolution
    if h % config.patch_size != 0 or w % config.patch_size != 0:
        from .ingest import DataError

        raise DataError(
            f"resolution {h}x{w} is not divisible by patch size "
            f"{config.patch_size}; re-export the images or change patch_size")
