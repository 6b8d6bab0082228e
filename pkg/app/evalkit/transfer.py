"""
Reporte de transferencia negativa: ganancia de AP por clase frente a una línea base
"""
from typing import Dict

from app.core.exceptions import ConfigurationError
from app.schemas.metrics import MetricsReport, NegativeTransferReport


def negative_transfer_report(
    adapted: MetricsReport,
    source_only: MetricsReport,
    adapted_name: str = "adapted",
    baseline_name: str = "SourceOnly",
) -> NegativeTransferReport:
    """
    Diferencia de AP por clase (adaptado - línea base)

    Las clases con ganancia negativa quedan marcadas. Las clases sin AP en
    alguno de los dos reportes no se comparan.
    """
    if sorted(adapted.common_classes) != sorted(source_only.common_classes):
        raise ConfigurationError(
            f"Listas de clases distintas: {adapted.common_classes} vs {source_only.common_classes}"
        )
    gains: Dict[int, float] = {}
    for class_id in sorted(adapted.common_classes):
        a = adapted.per_class_ap.get(class_id)
        b = source_only.per_class_ap.get(class_id)
        if a is None or b is None:
            continue
        gains[class_id] = a - b

    baseline_map = source_only.mean_ap
    return NegativeTransferReport(
        adapted=adapted_name,
        baseline=baseline_name,
        gains=gains,
        negative_classes=[c for c, g in gains.items() if g < 0],
        adapted_map=adapted.mean_ap,
        baseline_map=baseline_map,
        map_gain=adapted.mean_ap - baseline_map,
        relative_improvement=(adapted.mean_ap - baseline_map) / baseline_map if baseline_map > 0 else None,
    )


def with_baseline_gains(
    report: MetricsReport, baseline: MetricsReport, baseline_name: str = "SourceOnly"
) -> MetricsReport:
    """Copia del reporte con las ganancias por clase frente a ``baseline``"""
    transfer = negative_transfer_report(report, baseline, baseline_name=baseline_name)
    return report.model_copy(update={"baseline": baseline_name, "gains_vs_baseline": transfer.gains})
