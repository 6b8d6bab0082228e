"""
Orquestación de familias de corridas (presets × métodos × semillas) y tablas comparativas
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import pandas as pd
from reportlab.graphics import renderSVG
from reportlab.graphics.charts.barcharts import VerticalBarChart
from reportlab.graphics.charts.legends import Legend
from reportlab.graphics.shapes import Drawing, String
from reportlab.lib import colors

from app.config import get_settings
from app.evalkit.reports import MISSING, frame_to_markdown, markdown_table, write_report
from app.evalkit.transfer import negative_transfer_report, with_baseline_gains
from app.logger import get_logger
from app.scenegen.dataset import GeneratedDataset, generate_dataset
from app.schemas.common import BUCKETS, Method
from app.schemas.manifest import DatasetManifest
from app.schemas.metrics import MetricsReport
from app.services.presets import build_config
from app.workers.trainer import train

logger = get_logger()

DEFAULT_SEEDS = (1, 2, 3)
SWEEPABLE = (Method.USDAF, Method.USDAF_NO_SAA)
BASELINE = Method.SOURCE_ONLY.value

CHART_COLORS = [
    colors.HexColor("#4e79a7"),
    colors.HexColor("#f28e2b"),
    colors.HexColor("#59a14f"),
    colors.HexColor("#e15759"),
    colors.HexColor("#76b7b2"),
    colors.HexColor("#edc948"),
    colors.HexColor("#b07aa1"),
]


@dataclass(frozen=True)
class RunSpec:
    preset: str
    method: Method
    seed: int
    label: str
    m: Optional[float] = None


@dataclass
class RunOutcome:
    spec: RunSpec
    metrics: Optional[MetricsReport] = None
    run_dir: Optional[Path] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.metrics is not None


@dataclass
class SuiteResult:
    outcomes: List[RunOutcome]
    per_seed: pd.DataFrame
    summary: pd.DataFrame
    files: Dict[str, Path] = field(default_factory=dict)

    @property
    def failures(self) -> List[RunOutcome]:
        return [o for o in self.outcomes if not o.ok]


def expand_runs(
    presets: Sequence[str],
    methods: Sequence[Method],
    seeds: Sequence[int] = DEFAULT_SEEDS,
    m_sweep: Optional[Sequence[float]] = None,
) -> List[RunSpec]:
    """Producto ordenado; con ``m_sweep`` los métodos con filtro se expanden en una etiqueta por m"""
    runs = []
    for preset in presets:
        for method in (Method(m) for m in methods):
            variants: List[Tuple[str, Optional[float]]] = [(method.value, None)]
            if m_sweep and method in SWEEPABLE:
                variants = [(f"{method.value}_m{m:g}", float(m)) for m in m_sweep]
            for label, m in variants:
                runs.extend(RunSpec(preset, method, int(seed), label, m) for seed in seeds)
    return runs


@lru_cache(maxsize=4)
def _dataset_for(manifest_json: str) -> GeneratedDataset:
    # Las escenas se renderizan perezosamente y de forma pura; compartir entre corridas es seguro
    return generate_dataset(DatasetManifest.model_validate_json(manifest_json))


def execute_run(spec: RunSpec, output_root: Path, overrides: Mapping[str, object]) -> RunOutcome:
    """Una corrida del suite; los errores se registran y se devuelven en el resultado"""
    try:
        run_overrides = dict(overrides)
        run_overrides.update({"method": spec.method.value, "output_dir": str(output_root)})
        if spec.m is not None:
            run_overrides["m"] = spec.m
        config = build_config(preset=spec.preset, overrides=run_overrides)
        dataset = _dataset_for(config.manifest.model_dump_json())
        record = train(config, seed=spec.seed, dataset=dataset, label=spec.label)
        return RunOutcome(spec=spec, metrics=record.metrics, run_dir=record.run_dir)
    except Exception as e:
        logger.error(f"Corrida {spec.preset}/{spec.label}/seed_{spec.seed} fallida: {e}")
        return RunOutcome(spec=spec, error=f"{type(e).__name__}: {e}")


def _execute_many(
    runs: Sequence[RunSpec],
    output_root: Path,
    overrides: Mapping[str, object],
    workers: int,
    runner: Callable[[RunSpec, Path, Mapping[str, object]], RunOutcome],
) -> List[RunOutcome]:
    if workers <= 1 or len(runs) <= 1:
        return [runner(spec, output_root, overrides) for spec in runs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(runner, spec, output_root, dict(overrides)) for spec in runs]
        outcomes = []
        for spec, future in zip(runs, futures):
            try:
                outcomes.append(future.result())
            except Exception as e:
                logger.error(f"Proceso de la corrida {spec.preset}/{spec.label}/seed_{spec.seed} falló: {e}")
                outcomes.append(RunOutcome(spec=spec, error=f"{type(e).__name__}: {e}"))
        return outcomes


def per_seed_frame(outcomes: Sequence[RunOutcome]) -> pd.DataFrame:
    rows = []
    for o in outcomes:
        metrics = o.metrics
        row = {
            "preset": o.spec.preset,
            "method": o.spec.label,
            "seed": o.spec.seed,
            "status": "ok" if o.ok else "failed",
            "mean_ap": metrics.mean_ap if metrics else None,
        }
        for bucket in BUCKETS:
            row[f"map_{bucket.value}"] = metrics.per_scale_map.get(bucket) if metrics else None
        row["run_dir"] = str(o.run_dir) if o.run_dir else ""
        row["error"] = o.error or ""
        rows.append(row)
    return pd.DataFrame(rows)


def summary_frame(per_seed: pd.DataFrame) -> pd.DataFrame:
    """Media y desviación (poblacional, ddof=0) del mAP sobre las semillas exitosas"""
    ok = per_seed[per_seed["status"] == "ok"].astype({"mean_ap": float})
    if ok.empty:
        return pd.DataFrame(columns=["preset", "method", "mean_ap_mean", "mean_ap_std", "n_seeds"])
    grouped = ok.groupby(["preset", "method"], sort=False)["mean_ap"]
    return pd.DataFrame(
        {
            "mean_ap_mean": grouped.mean(),
            "mean_ap_std": grouped.std(ddof=0),
            "n_seeds": grouped.count(),
        }
    ).reset_index()


def summary_markdown(summary: pd.DataFrame, presets: Sequence[str], labels: Sequence[str]) -> str:
    """Filas = métodos, columnas = presets en el orden pedido; huecos marcados con —"""
    cells = {
        (row.preset, row.method): f"{row.mean_ap_mean:.4f} ± {row.mean_ap_std:.4f}"
        for row in summary.itertuples(index=False)
    }
    rows = [[label] + [cells.get((preset, label), MISSING) for preset in presets] for label in labels]
    return markdown_table(["método", *presets], rows)


def per_class_frame(outcomes: Sequence[RunOutcome], preset: str, labels: Sequence[str]) -> pd.DataFrame:
    """AP medio por clase común sobre semillas, una fila por método"""
    records = []
    for o in outcomes:
        if o.ok and o.spec.preset == preset:
            for class_id, ap in o.metrics.per_class_ap.items():
                records.append({"method": o.spec.label, "class_id": int(class_id), "ap": ap})
    if not records:
        return pd.DataFrame({"method": list(labels)})
    frame = pd.DataFrame(records).astype({"ap": float}).pivot_table(
        index="method", columns="class_id", values="ap", aggfunc="mean", dropna=False
    )
    frame = frame.reindex(list(labels))
    frame.index.name = "method"
    frame.columns = [f"class_{c}" for c in frame.columns]
    return frame.reset_index()


def _baselines(outcomes: Sequence[RunOutcome]) -> Dict[Tuple[str, int], RunOutcome]:
    return {(o.spec.preset, o.spec.seed): o for o in outcomes if o.ok and o.spec.label == BASELINE}


def negative_transfer_frame(outcomes: Sequence[RunOutcome]) -> pd.DataFrame:
    """Ganancia frente a SourceOnly con la misma semilla; marca transferencia negativa"""
    baselines = _baselines(outcomes)
    rows = []
    for o in outcomes:
        base = baselines.get((o.spec.preset, o.spec.seed))
        if not o.ok or o.spec.label == BASELINE or base is None:
            continue
        report = negative_transfer_report(o.metrics, base.metrics, adapted_name=o.spec.label)
        rows.append(
            {
                "preset": o.spec.preset,
                "method": o.spec.label,
                "seed": o.spec.seed,
                "adapted_map": report.adapted_map,
                "baseline_map": report.baseline_map,
                "map_gain": report.map_gain,
                "relative_improvement": report.relative_improvement,
                "negative_transfer": report.map_gain < 0,
                "negative_classes": " ".join(str(c) for c in report.negative_classes),
            }
        )
    return pd.DataFrame(rows)


def ordering_frame(outcomes: Sequence[RunOutcome]) -> pd.DataFrame:
    rows = []
    for o in outcomes:
        if not o.ok or o.metrics.group_means is None:
            continue
        gm = o.metrics.group_means
        rows.append(
            {
                "preset": o.spec.preset,
                "method": o.spec.label,
                "seed": o.spec.seed,
                "src_private": gm.src_private,
                "src_common": gm.src_common,
                "tgt_common": gm.tgt_common,
                "tgt_private": gm.tgt_private,
                "ordering_holds": gm.ordering_holds,
            }
        )
    return pd.DataFrame(rows)


def attach_baseline_gains(outcomes: Sequence[RunOutcome]) -> None:
    """Reescribir metrics.json/md de cada corrida adaptada con sus ganancias frente a SourceOnly"""
    baselines = _baselines(outcomes)
    for o in outcomes:
        base = baselines.get((o.spec.preset, o.spec.seed))
        if not o.ok or o.spec.label == BASELINE or base is None:
            continue
        o.metrics = with_baseline_gains(o.metrics, base.metrics, BASELINE)
        if o.run_dir is not None:
            write_report(o.metrics, o.run_dir)


def summary_chart(summary: pd.DataFrame, presets: Sequence[str], labels: Sequence[str], path: Path) -> Path:
    """Barras agrupadas de mAP medio: un grupo por preset, una serie por método"""
    means = {(row.preset, row.method): row.mean_ap_mean for row in summary.itertuples(index=False)}
    width = max(400, 90 * len(presets) * max(1, len(labels)) // 2 + 160)
    drawing = Drawing(width, 320)
    drawing.add(String(width / 2, 300, "mAP@0.5 en clases comunes (media sobre semillas)", textAnchor="middle"))

    chart = VerticalBarChart()
    chart.x, chart.y = 50, 50
    chart.width, chart.height = width - 200, 230
    # Las corridas faltantes se dibujan como 0; la tabla Markdown las marca con —
    chart.data = [[float(means.get((preset, label), 0.0)) for preset in presets] for label in labels]
    chart.categoryAxis.categoryNames = list(presets)
    chart.valueAxis.valueMin = 0.0
    chart.valueAxis.valueMax = max([1e-3] + [v for series in chart.data for v in series]) * 1.1
    for i in range(len(labels)):
        chart.bars[i].fillColor = CHART_COLORS[i % len(CHART_COLORS)]
    drawing.add(chart)

    legend = Legend()
    legend.x, legend.y = width - 140, 260
    legend.colorNamePairs = [(CHART_COLORS[i % len(CHART_COLORS)], label) for i, label in enumerate(labels)]
    drawing.add(legend)

    renderSVG.drawToFile(drawing, str(path))
    return path


def run_suite(
    presets: Sequence[str],
    methods: Sequence[Method],
    seeds: Sequence[int] = DEFAULT_SEEDS,
    output_root: Optional[Path] = None,
    workers: int = 1,
    m_sweep: Optional[Sequence[float]] = None,
    overrides: Optional[Mapping[str, object]] = None,
    runner: Optional[Callable[[RunSpec, Path, Mapping[str, object]], RunOutcome]] = None,
    chart: bool = True,
) -> SuiteResult:
    """
    Ejecutar todas las corridas y emitir las tablas comparativas

    Salidas en ``output_root``: per_seed.csv, summary.csv, summary.md,
    per_class_<preset>.csv, negative_transfer.csv, ordering.csv y
    summary.svg. Las corridas fallidas dejan huecos marcados con —.
    """
    output_root = Path(output_root or get_settings().UNIDET_OUTPUT_ROOT)
    output_root.mkdir(parents=True, exist_ok=True)
    runs = expand_runs(presets, methods, seeds, m_sweep)
    labels = list(dict.fromkeys(spec.label for spec in runs))
    logger.info(f"Suite: {len(runs)} corridas ({len(presets)} presets × {len(labels)} métodos × {len(seeds)} semillas)")

    outcomes = _execute_many(runs, output_root, dict(overrides or {}), workers, runner or execute_run)
    attach_baseline_gains(outcomes)

    per_seed = per_seed_frame(outcomes)
    summary = summary_frame(per_seed)
    files: Dict[str, Path] = {}

    files["per_seed"] = output_root / "per_seed.csv"
    per_seed.to_csv(files["per_seed"], index=False)
    files["summary"] = output_root / "summary.csv"
    summary.to_csv(files["summary"], index=False)

    sections = ["# Resumen mAP@0.5 (media ± desviación sobre semillas)", summary_markdown(summary, presets, labels)]
    transfer = negative_transfer_frame(outcomes)
    files["negative_transfer"] = output_root / "negative_transfer.csv"
    transfer.to_csv(files["negative_transfer"], index=False)
    if not transfer.empty:
        sections += ["## Transferencia negativa frente a SourceOnly", frame_to_markdown(transfer)]
    ordering = ordering_frame(outcomes)
    files["ordering"] = output_root / "ordering.csv"
    ordering.to_csv(files["ordering"], index=False)
    if not ordering.empty:
        sections += ["## Orden de d0 por grupo", frame_to_markdown(ordering)]
    failures = [o for o in outcomes if not o.ok]
    if failures:
        sections += [
            "## Corridas fallidas",
            markdown_table(
                ["preset", "método", "seed", "error"],
                [[o.spec.preset, o.spec.label, o.spec.seed, o.error] for o in failures],
            ),
        ]
    files["summary_md"] = output_root / "summary.md"
    files["summary_md"].write_text("\n\n".join(sections) + "\n")

    for preset in presets:
        path = output_root / f"per_class_{preset}.csv"
        per_class_frame(outcomes, preset, labels).to_csv(path, index=False)
        files[f"per_class_{preset}"] = path

    if chart:
        files["chart"] = summary_chart(summary, presets, labels, output_root / "summary.svg")

    logger.info(f"Suite terminado: {len(outcomes) - len(failures)} ok, {len(failures)} fallidas; tablas en {output_root}")
    return SuiteResult(outcomes=outcomes, per_seed=per_seed, summary=summary, files=files)
