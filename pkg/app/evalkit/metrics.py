"""
AP por clase, mAP sobre clases comunes y mAP por escala
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from app.core.exceptions import ConfigurationError
from app.detector.model import Detection
from app.evalkit.matching import match_detections
from app.logger import get_logger
from app.scenegen.label_spaces import LabelSpaceConfig
from app.scenegen.render import Annotation
from app.schemas.common import BUCKETS, ScaleBucket
from app.schemas.metrics import MetricsReport
from app.usdaf.scale import REFERENCE_SIDE_PX, bucket_of_box

logger = get_logger()

IOU_THRESHOLD = 0.5


def average_precision(tp_flags, confidences, num_gt: int) -> Optional[float]:
    """
    AP con interpolación sobre todos los puntos (estilo VOC 2010)

    Devuelve None si no hay GT ni detecciones (clase excluida del promedio).
    """
    tp = np.asarray(tp_flags, dtype=bool).reshape(-1)
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    if num_gt < 0:
        raise ConfigurationError(f"num_gt debe ser >= 0, se recibió {num_gt}")
    if num_gt == 0:
        return None if tp.size == 0 else 0.0
    if tp.size == 0:
        return 0.0

    tp = tp[np.argsort(-conf, kind="stable")]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / float(num_gt)
    precision = ctp / (ctp + cfp)

    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(per_class_ap: Mapping[int, Optional[float]], common_classes: Sequence[int]) -> float:
    """Media aritmética de los AP disponibles de las clases comunes"""
    if not common_classes:
        raise ConfigurationError("mean_ap requiere al menos una clase común")
    included = [per_class_ap[c] for c in common_classes if per_class_ap.get(c) is not None]
    if not included:
        logger.warning("Ninguna clase común tiene AP definido; mAP = 0.0")
        return 0.0
    return float(np.mean(included))


@dataclass
class ClassRecords:
    """Detecciones evaluadas de una clase, acumuladas sobre imágenes"""
    confidences: List[float] = field(default_factory=list)
    tp: List[bool] = field(default_factory=list)
    det_keys: List[Optional[ScaleBucket]] = field(default_factory=list)
    gt_keys: List[Optional[ScaleBucket]] = field(default_factory=list)


def collect_class_records(
    detections_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Annotation]],
    class_id: int,
    bucket_fn: Optional[Callable] = None,
    iou_threshold: float = IOU_THRESHOLD,
) -> ClassRecords:
    """
    Emparejar imagen por imagen las detecciones de una clase

    Con ``bucket_fn`` cada detección recibe la cubeta de su GT emparejada o,
    si es FP, la de su propia caja.
    """
    if len(detections_per_image) != len(gts_per_image):
        raise ConfigurationError("Detecciones y GT deben cubrir las mismas imágenes")
    records = ClassRecords()
    for dets, gts in zip(detections_per_image, gts_per_image):
        dets = [d for d in dets if d.class_id == class_id]
        gts = [g for g in gts if g.class_id == class_id]
        gt_boxes = [g.box for g in gts]
        result = match_detections(
            [d.box for d in dets], [d.confidence for d in dets], gt_boxes, iou_threshold
        )
        gt_keys = [bucket_fn(box) if bucket_fn else None for box in gt_boxes]
        records.gt_keys.extend(gt_keys)
        for i, det in enumerate(dets):
            records.confidences.append(det.confidence)
            records.tp.append(bool(result.tp[i]))
            if bucket_fn is None:
                records.det_keys.append(None)
            elif result.matched_gt[i] >= 0:
                records.det_keys.append(gt_keys[result.matched_gt[i]])
            else:
                records.det_keys.append(bucket_fn(det.box))
    return records


def _filter_for_evaluation(
    detections_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Annotation]],
    label_space: LabelSpaceConfig,
):
    """Quitar GT privadas del objetivo y detecciones de clases privadas de la fuente"""
    common = set(label_space.common)
    dets = [[d for d in image if d.class_id in common] for image in detections_per_image]
    gts = [[g for g in image if g.class_id in common] for image in gts_per_image]
    return dets, gts


def per_scale_map(
    detections_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Annotation]],
    classes: Sequence[int],
    image_size: int = 64,
    reference_side_px: float = REFERENCE_SIDE_PX,
) -> Dict[ScaleBucket, Optional[float]]:
    """mAP por cubeta; una cubeta sin GT queda ausente (None)"""

    def bucket_fn(box):
        return bucket_of_box(box, image_size, reference_side_px)

    records = {
        c: collect_class_records(detections_per_image, gts_per_image, c, bucket_fn) for c in classes
    }
    result: Dict[ScaleBucket, Optional[float]] = {}
    for bucket in BUCKETS:
        if not any(k is bucket for r in records.values() for k in r.gt_keys):
            result[bucket] = None
            continue
        aps = {}
        for c, r in records.items():
            idx = [i for i, k in enumerate(r.det_keys) if k is bucket]
            aps[c] = average_precision(
                [r.tp[i] for i in idx],
                [r.confidences[i] for i in idx],
                sum(1 for k in r.gt_keys if k is bucket),
            )
        result[bucket] = mean_ap(aps, list(classes))
    return result


def evaluate_detections(
    detections_per_image: Sequence[Sequence[Detection]],
    gts_per_image: Sequence[Sequence[Annotation]],
    label_space: LabelSpaceConfig,
    image_size: int = 64,
    reference_side_px: float = REFERENCE_SIDE_PX,
) -> MetricsReport:
    """AP por clase común, mAP@0.5 y mAP por escala"""
    dets, gts = _filter_for_evaluation(detections_per_image, gts_per_image, label_space)
    classes = list(label_space.common)
    per_class: Dict[int, Optional[float]] = {}
    num_gt: Dict[int, int] = {}
    for c in classes:
        records = collect_class_records(dets, gts, c)
        num_gt[c] = len(records.gt_keys)
        per_class[c] = average_precision(records.tp, records.confidences, num_gt[c])

    return MetricsReport(
        per_class_ap=per_class,
        common_classes=classes,
        mean_ap=mean_ap(per_class, classes),
        per_scale_map=per_scale_map(dets, gts, classes, image_size, reference_side_px),
        num_gt=num_gt,
        num_detections=sum(len(d) for d in dets),
    )
