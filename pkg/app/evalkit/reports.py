"""
Serialización de reportes: JSON y tablas Markdown
"""
from pathlib import Path
from typing import Sequence

import pandas as pd

from app.schemas.common import BUCKETS
from app.schemas.metrics import MetricsReport

MISSING = "—"


def format_value(value, digits: int = 4) -> str:
    if value is None or (isinstance(value, float) and pd.isna(value)):
        return MISSING
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def markdown_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = [
        "| " + " | ".join(str(h) for h in headers) + " |",
        "|" + "|".join("---" for _ in headers) + "|",
    ]
    for row in rows:
        lines.append("| " + " | ".join(format_value(v) for v in row) + " |")
    return "\n".join(lines)


def frame_to_markdown(frame: pd.DataFrame) -> str:
    return markdown_table([str(c) for c in frame.columns], list(frame.itertuples(index=False)))


def report_to_markdown(report: MetricsReport) -> str:
    sections = []
    if report.metadata is not None:
        meta = report.metadata
        sections.append(
            f"# {meta.name} · {meta.method.value} · seed {meta.seed}\n\n"
            f"- preset: {meta.preset or MISSING}\n- config_hash: `{meta.config_hash}`"
        )
    sections.append(f"**mAP@0.5 (clases comunes): {format_value(report.mean_ap)}**")

    rows = []
    for class_id in report.common_classes:
        gain = (report.gains_vs_baseline or {}).get(class_id)
        rows.append([class_id, report.per_class_ap.get(class_id), report.num_gt.get(class_id, 0), gain])
    gain_header = f"ganancia vs {report.baseline}" if report.baseline else "ganancia"
    sections.append(markdown_table(["clase", "AP", "GT", gain_header], rows))

    sections.append(
        markdown_table(
            ["escala", "mAP"], [[b.value, report.per_scale_map.get(b)] for b in BUCKETS]
        )
    )
    if report.group_means is not None:
        gm = report.group_means
        sections.append(
            markdown_table(
                ["src_private", "src_common", "tgt_common", "tgt_private", "orden"],
                [[gm.src_private, gm.src_common, gm.tgt_common, gm.tgt_private, gm.ordering_holds]],
            )
        )
    return "\n\n".join(sections) + "\n"


def write_report(report: MetricsReport, run_dir: Path) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "metrics.json"
    path.write_text(report.model_dump_json(indent=2))
    (run_dir / "metrics.md").write_text(report_to_markdown(report))
    return path


def load_report(path: Path) -> MetricsReport:
    return MetricsReport.model_validate_json(Path(path).read_text())
