from app.evalkit.matching import MatchResult, match_detections
from app.evalkit.metrics import average_precision, evaluate_detections, mean_ap, per_scale_map
from app.evalkit.transfer import negative_transfer_report
from app.evalkit.export import export_instance_features

__all__ = [
    "MatchResult",
    "match_detections",
    "average_precision",
    "evaluate_detections",
    "mean_ap",
    "per_scale_map",
    "negative_transfer_report",
    "export_instance_features",
]
