"""Command-line interface.

Verbs: ``audit`` runs one attack over a labeled manifest, ``ablate``
sweeps threshold bands over shared reconstructions, ``plot`` re-renders
figures from a saved report, ``verify-protocol`` handshakes with an
external predictor, and ``make-synthetic`` generates the textured demo
benchmark.  Exit codes: 0 success, 1 configuration error, 2 data error,
3 predictor or protocol error.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import protocol, reporting
from .config import AuditConfig, ConfigError, build_predictor, load_config
from .frequency import (PatchGrid, laplacian_response, mask_from_image,
                        patch_scores, write_mask_image, write_score_dump)
from .ingest import DataError, ingest
from .pipeline import DEFAULT_ABLATION_GRID, PipelineError, run_ablation, run_audit
from .predictors import ExternalPredictor
from .synthetic import make_benchmark, write_benchmark

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_PREDICTOR = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


_CONFIG_OPTIONS = [
    ("--total-steps", "total_steps", int, "diffusion steps T"),
    ("--beta-start", "beta_start", float, "schedule start beta"),
    ("--beta-end", "beta_end", float, "schedule end beta"),
    ("--sampling-steps", "sampling_steps", int, "traversal steps k"),
    ("--attack-step", "attack_step", int, "level probed by the round trip"),
    ("--round-trips", "round_trips", int, "round trips per image"),
    ("--l-min", "l_min", float, "lower percentile of the kept band"),
    ("--l-max", "l_max", float, "upper percentile of the kept band"),
    ("--patch-size", "patch_size", int, "patch edge length"),
    ("--laplacian-mode", "laplacian_mode", str, "sum_squared or mean_abs"),
    ("--dynamic-range", "dynamic_range", float, "SSIM dynamic range"),
    ("--use-ssim/--no-ssim", "use_ssim", bool, "include the SSIM term"),
    ("--l2-normalize/--no-l2-normalize", "l2_normalize", bool,
     "RMS-normalize the L2 term"),
    ("--attack", "attack", str, "fcre, secmi, or loss"),
    ("--predictor", "predictor", str,
     "constant:<v> | gaussian | memorizing | external:<host:port>"),
    ("--gaussian-mean", "gaussian_mean", str, "'zero' or a mean image path"),
    ("--gaussian-std", "gaussian_std", float, "analytic data std"),
    ("--memorizing-bank", "memorizing_bank", str,
     "'members' or a bank manifest path"),
    ("--memorizing-temperature", "memorizing_temperature", float,
     "softmin temperature"),
    ("--external-timeout", "external_timeout", float, "wire timeout seconds"),
    ("--loss-steps", "loss_steps", int, "steps sampled by the loss attack"),
    ("--histogram-bins", "histogram_bins", int, "histogram bin count"),
    ("--fpr-target", "fpr_target", float, "FPR budget for the TPR metric"),
    ("--balanced-asr/--raw-asr", "balanced_asr", bool,
     "balanced vs raw accuracy for ASR"),
    ("--seed", "seed", int, "run seed"),
    ("--workers", "workers", int, "image-level worker threads"),
    ("--luminance/--keep-channels", "luminance", bool,
     "collapse color inputs to luminance"),
    ("--export-masks/--no-export-masks", "export_masks", bool,
     "write per-image mask graymaps and score dumps"),
    ("--out", "output_dir", str, "output directory"),
]


def config_options(fn):
    for decl, name, kind, help_text in reversed(_CONFIG_OPTIONS):
        if kind is bool:
            fn = click.option(decl, name, default=None, help=help_text)(fn)
        else:
            fn = click.option(decl, name, type=kind, default=None,
                              help=help_text)(fn)
    return click.option("--config", "config_path",
                        type=click.Path(exists=True, dir_okay=False),
                        default=None, help="flat key = value config file")(fn)


def _build_config(config_path: str | None, overrides: dict) -> AuditConfig:
    try:
        return load_config(config_path, **overrides)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))


def _load_dataset(manifest: str, config: AuditConfig):
    try:
        return ingest(manifest, luminance_only=config.luminance)
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))


def _export_masks(dataset, config: AuditConfig, out: Path) -> None:
    mask_dir = out / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    grid = PatchGrid(config.patch_size)
    for entry in dataset.entries:
        stem = entry.image_id.replace("/", "_").replace("\\", "_")
        scores = patch_scores(laplacian_response(entry.pixels), grid,
                              mode=config.laplacian_mode)
        mask = mask_from_image(entry.pixels, config.band(), grid,
                               mode=config.laplacian_mode)
        write_mask_image(mask, mask_dir / f"{stem}.pgm")
        write_score_dump(scores, mask_dir / f"{stem}.scores.txt")


@click.group()
def main() -> None:
    """Membership-inference auditing for diffusion models."""


@main.command()
@config_options
@click.option("--manifest", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="audit dataset manifest (path,label per line)")
def audit(config_path, manifest, **overrides) -> None:
    """Run one attack over a labeled dataset and write the report bundle."""
    config = _build_config(config_path, overrides)
    dataset = _load_dataset(manifest, config)
    try:
        result = run_audit(config, dataset)
    except (PipelineError, DataError) as exc:
        _fail(EXIT_DATA, str(exc))
    except protocol.ProtocolError as exc:
        _fail(EXIT_PREDICTOR, str(exc))
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    out = Path(config.output_dir)
    paths = reporting.emit_all(result.report, result.records, out)
    if config.export_masks:
        _export_masks(dataset, config, out)
    report = result.report
    click.echo(f"attack={report.attack} images={len(result.records)} "
               f"quarantined={report.n_quarantined}")
    click.echo(f"ASR={report.asr:.4f} AUC={report.auc:.4f} "
               f"TPR@FPR{report.fpr_target:g}={report.tpr_at_fpr:.4f}")
    click.echo(f"report: {paths['report']}")


@main.command()
@config_options
@click.option("--manifest", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid_text", default=None,
              help="semicolon-separated l_min:l_max pairs, e.g. '0:100;15:85'")
def ablate(config_path, manifest, grid_text, **overrides) -> None:
    """Sweep threshold bands, reusing reconstructions across cells."""
    config = _build_config(config_path, overrides)
    grid = DEFAULT_ABLATION_GRID
    if grid_text:
        try:
            grid = []
            for part in grid_text.split(";"):
                lo, _, hi = part.partition(":")
                grid.append((float(lo), float(hi)))
        except ValueError as exc:
            _fail(EXIT_CONFIG, f"bad --grid value {grid_text!r}: {exc}")
    dataset = _load_dataset(manifest, config)
    try:
        results = run_ablation(config, dataset, grid)
    except (PipelineError, DataError) as exc:
        _fail(EXIT_DATA, str(exc))
    except protocol.ProtocolError as exc:
        _fail(EXIT_PREDICTOR, str(exc))
    except (ConfigError, ValueError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary_lines = ["l_min,l_max,asr,auc,tpr_at_fpr"]
    for (l_min, l_max), result in results.items():
        cell = f"band_{l_min:g}_{l_max:g}"
        reporting.emit_all(result.report, result.records, out / cell)
        r = result.report
        summary_lines.append(
            f"{l_min:g},{l_max:g},{r.asr!r},{r.auc!r},{r.tpr_at_fpr!r}")
        click.echo(f"[{l_min:g}, {l_max:g}]  ASR={r.asr:.4f}  AUC={r.auc:.4f}  "
                   f"TPR@FPR{r.fpr_target:g}={r.tpr_at_fpr:.4f}")
    (out / "ablation_summary.csv").write_text("\n".join(summary_lines) + "\n",
                                              encoding="utf-8")
    click.echo(f"summary: {out / 'ablation_summary.csv'}")


@main.command("plot")
@click.option("--report", "report_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default=".", type=click.Path(file_okay=False))
def plot_cmd(report_path, out_dir) -> None:
    """Re-render histogram and ROC figures from a saved report."""
    try:
        report = reporting.read_report(report_path)
    except (OSError, KeyError, ValueError) as exc:
        _fail(EXIT_DATA, f"cannot parse report {report_path}: {exc}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        reporting.save_histogram_plot(report, out / "histogram.svg")
        reporting.save_roc_plot(report, out / "roc.svg")
        reporting.write_histogram_table(report, out / "histogram.csv")
        reporting.write_roc_table(report, out / "roc.csv")
    except ValueError as exc:
        _fail(EXIT_DATA, str(exc))
    click.echo(f"plots written to {out}")


@main.command("verify-protocol")
@click.option("--endpoint", required=True, help="host:port of the adapter")
@click.option("--shape", default="1,8,8",
              help="channels,height,width of the probe batch")
@click.option("--t", "step", default=1, type=int, help="probe step index")
@click.option("--timeout", default=10.0, type=float)
def verify_protocol(endpoint, shape, step, timeout) -> None:
    """Send a probe frame to an external predictor and check the response."""
    try:
        dims = tuple(int(p) for p in shape.split(","))
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(shape)
    except ValueError:
        _fail(EXIT_CONFIG, f"bad --shape {shape!r}; expected C,H,W")
    try:
        client = ExternalPredictor.from_endpoint(endpoint, timeout=timeout)
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))
    probe = np.zeros((1,) + dims, dtype=np.float64)
    try:
        with client:
            out = client.roundtrip(step, probe)
    except protocol.ProtocolError as exc:
        _fail(EXIT_PREDICTOR, f"{type(exc).__name__}: {exc}")
    click.echo(f"ok: endpoint {endpoint} answered a {out.shape} batch at t={step}")


@main.command("make-synthetic")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--members", default=256, type=int)
@click.option("--nonmembers", default=256, type=int)
@click.option("--size", default=32, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--noise", default=0.0, type=float,
              help="i.i.d. noise amplitude added to the audit copies")
def make_synthetic(out_dir, members, nonmembers, size, seed, noise) -> None:
    """Generate the textured benchmark dataset and its manifests."""
    if members < 1 or nonmembers < 1 or size < 8:
        _fail(EXIT_CONFIG, "need members >= 1, nonmembers >= 1, size >= 8")
    benchmark = make_benchmark(n_member=members, n_nonmember=nonmembers,
                               size=size, seed=seed, noise_amplitude=noise)
    manifest = write_benchmark(benchmark, out_dir)
    click.echo(f"audit manifest: {manifest}")
    click.echo(f"bank manifest:  {Path(out_dir) / 'bank_manifest.csv'}")


if __name__ == "__main__":
    main()
