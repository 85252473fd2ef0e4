"""Membership-inference auditing toolkit for diffusion models.

The pipeline reconstructs each image through a deterministic round trip
at a chosen noise level, masks the comparison to mid-frequency patches
selected on the original image, scores the residual with SSIM plus L2,
and evaluates the resulting member/nonmember separation.
"""

from .baselines import loss_based_score, secmi_score
from .config import AuditConfig, ConfigError, build_predictor, load_config
from .diffusion import (NoiseSchedule, TrajectoryConfig, build_linear_schedule,
                        ddim_denoise_step, ddim_reverse_step, forward_noise,
                        reconstruct_at_step, reconstruction_error_map,
                        traverse_to_step)
from .evaluation import (AttackReport, ScoreSet, compute_asr,
                         compute_asr_holdout, compute_auc, decide_membership,
                         evaluate, histogram, roc_points, tpr_at_fpr)
from .frequency import (FrequencyMask, PatchGrid, ThresholdBand, apply_mask,
                        build_mask, laplacian_response, mask_from_image,
                        patch_scores)
from .ingest import DataError, DatasetManifest, ingest
from .pipeline import AuditResult, PipelineError, run_ablation, run_audit
from .predictors import (ConstantPredictor, ExternalPredictor,
                         GaussianAnalyticPredictor, MemorizingPredictor,
                         NoisePredictor)
from .similarity import ScoreRecord, SsimParams, aggregate_ssim, masked_l2, mia_score, ssim_patch
from .synthetic import benchmark_config, make_benchmark, tune_temperature

__version__ = "0.1.0"
