"""Report persistence: structured report, score stream, delimited tables,
and deterministic vector plots.

Figures are SVG with a pinned hash salt and no timestamp metadata, so a
fixed report renders byte-identical files on every run; the same data
always ships alongside as plain CSV for anything that would rather not
parse a plot.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluation import AttackReport  # noqa: E402
from .similarity import ScoreRecord  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "diffaudit"

_MEMBER_COLOR = "#b03a48"
_NONMEMBER_COLOR = "#3a7ca5"


def write_report(report: AttackReport, path: str | Path) -> None:
    Path(path).write_text(report.to_json() + "\n", encoding="utf-8")


def read_report(path: str | Path) -> AttackReport:
    return AttackReport.from_json(Path(path).read_text(encoding="utf-8"))


def write_records(records: list[ScoreRecord], path: str | Path) -> None:
    """Line-delimited score stream, one structured record per image."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json_line() + "\n")


def read_records(path: str | Path) -> list[ScoreRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ScoreRecord.from_json_line(line) for line in lines if line.strip()]


def write_roc_table(report: AttackReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fpr,tpr\n")
        for fpr, tpr in report.roc_points:
            fh.write(f"{fpr!r},{tpr!r}\n")


def write_histogram_table(report: AttackReport, path: str | Path) -> None:
    hist = report.histogram
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_left,bin_right,member_density,nonmember_density,"
                 "member_count,nonmember_count\n")
        for i in range(len(hist.member_density)):
            fh.write(f"{float(hist.edges[i])!r},{float(hist.edges[i + 1])!r},"
                     f"{float(hist.member_density[i])!r},"
                     f"{float(hist.nonmember_density[i])!r},"
                     f"{int(hist.member_counts[i])},{int(hist.nonmember_counts[i])}\n")


def _deterministic_savefig(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def save_histogram_plot(report: AttackReport, path: str | Path) -> None:
    """Score-distribution bars for the two populations, density scaled."""
    _require_populations(report)
    hist = report.histogram
    edges = hist.edges
    widths = [edges[i + 1] - edges[i] for i in range(len(edges) - 1)]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.bar(edges[:-1], hist.member_density, width=widths, align="edge",
           alpha=0.55, color=_MEMBER_COLOR, label=f"member (n={report.n_member})")
    ax.bar(edges[:-1], hist.nonmember_density, width=widths, align="edge",
           alpha=0.55, color=_NONMEMBER_COLOR,
           label=f"nonmember (n={report.n_nonmember})")
    ax.set_xlabel(f"{report.attack} score")
    ax.set_ylabel("probability density")
    ax.set_title(f"score distributions  (AUC={report.auc:.3f}, ASR={report.asr:.3f})")
    ax.legend(frameon=False)
    fig.tight_layout()
    _deterministic_savefig(fig, Path(path))


def save_roc_plot(report: AttackReport, path: str | Path) -> None:
    _require_populations(report)
    fpr = [p[0] for p in report.roc_points]
    tpr = [p[1] for p in report.roc_points]
    fig, ax = plt.subplots(figsize=(4.6, 4.4))
    ax.plot(fpr, tpr, drawstyle="steps-post", color=_MEMBER_COLOR,
            label=f"AUC={report.auc:.3f}")
    ax.plot([0, 1], [0, 1], linestyle="--", linewidth=0.8, color="gray")
    ax.axvline(report.fpr_target, linestyle=":", linewidth=0.8, color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"{report.attack} ROC  "
                 f"(TPR@FPR{report.fpr_target:.0%}={report.tpr_at_fpr:.3f})")
    ax.legend(frameon=False, loc="lower right")
    fig.tight_layout()
    _deterministic_savefig(fig, Path(path))


def _require_populations(report: AttackReport) -> None:
    if report.n_member < 1 or report.n_nonmember < 1:
        raise ValueError(
            f"cannot plot a report with empty populations "
            f"(members={report.n_member}, nonmembers={report.n_nonmember})")


def emit_all(report: AttackReport, records: list[ScoreRecord] | None,
             out_dir: str | Path, prefix: str = "") -> dict[str, Path]:
    """Write the full report bundle into a directory; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = (prefix + "_") if prefix else ""
    paths = {
        "report": out / f"{name}report.json",
        "roc_table": out / f"{name}roc.csv",
        "histogram_table": out / f"{name}histogram.csv",
        "roc_plot": out / f"{name}roc.svg",
        "histogram_plot": out / f"{name}histogram.svg",
    }
    write_report(report, paths["report"])
    write_roc_table(report, paths["roc_table"])
    write_histogram_table(report, paths["histogram_table"])
    save_roc_plot(report, paths["roc_plot"])
    save_histogram_plot(report, paths["histogram_plot"])
    if records is not None:
        paths["records"] = out / f"{name}scores.jsonl"
        write_records(records, paths["records"])
    return paths
