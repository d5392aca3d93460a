import logging
from pathlib import Path
from typing import Sequence

import pandas as pd

from theme_detection.misc import dumps_stable
from theme_detection.model.evaluate import ClusterExemplars, ConfusionMatrix, EvalReport

LOG = logging.getLogger(__name__)

REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"
CONFUSION_CSV = "confusion.csv"
EXEMPLARS_MD = "exemplars.md"


def per_tag_frame(report: EvalReport) -> pd.DataFrame:
    return pd.DataFrame(
        [score.model_dump() for score in report.per_tag],
        columns=["tag", "precision", "recall", "f1", "support"],
    )


def confusion_frame(confusion: ConfusionMatrix) -> pd.DataFrame:
    frame = pd.DataFrame(confusion.matrix, index=confusion.labels, columns=confusion.columns)
    frame.index.name = "gold"
    return frame


def format_report(report: EvalReport, title: str = "") -> str:
    """Plain text summary: headline scores, per-tag scores and the confusion matrix."""

    lines = [title] if title else []
    lines += [
        f"Micro-F1:  {report.micro_f1:.4f}",
        f"Macro-F1:  {report.macro_f1:.4f}",
        f"Questions: {report.questions} ({report.abstained} abstained)",
        "",
        per_tag_frame(report).to_string(index=False, float_format="{:.4f}".format),
        "",
        confusion_frame(report.confusion).to_string(),
    ]
    return "\n".join(lines) + "\n"


def dump_confusion(confusion: ConfusionMatrix) -> str:
    return confusion_frame(confusion).to_csv(lineterminator="\n")


def _cell(text: str) -> str:
    return " ".join(text.split()).replace("|", "\\|")


def format_exemplars(exemplars: Sequence[ClusterExemplars]) -> str:
    """Markdown with one table of nearest-to-centroid sentences per cluster."""

    lines = ["# Cluster exemplars", ""]
    for cluster in exemplars:
        tags = ", ".join(f"{tag} ({float(p):.3f})" for tag, p in cluster.tags) or "none"
        lines += [
            f"## Cluster {cluster.cluster}",
            "",
            f"Size: {cluster.size}. Purity: {float(cluster.purity):.3f}. Dominant tags: {tags}.",
            "",
            "| Rank | Sentence | Distance |",
            "| ---: | --- | ---: |",
        ]
        lines += [
            f"| {e.rank} | {_cell(e.text)} | {e.distance:.4f} |" for e in cluster.exemplars
        ]
        lines.append("")
    return "\n".join(lines)


def render_reports(
    report: EvalReport,
    exemplars: Sequence[ClusterExemplars],
    title: str = "",
) -> dict[str, str]:
    """JSON report, text summary, confusion CSV and exemplar tables by file name."""

    return {
        REPORT_JSON: dumps_stable(report.model_dump(mode="json")),
        REPORT_TEXT: format_report(report, title),
        CONFUSION_CSV: dump_confusion(report.confusion),
        EXEMPLARS_MD: format_exemplars(exemplars),
    }


def write_reports(
    out_dir: Path | str,
    report: EvalReport,
    exemplars: Sequence[ClusterExemplars],
    title: str = "",
) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    paths = {}
    for name, content in render_reports(report, exemplars, title).items():
        path = out_dir / name
        path.write_text(content, encoding="utf-8", newline="\n")
        paths[name] = path

    LOG.info("Reports written to %s", out_dir)
    return paths
