"""
Pérdida supervisada de detección (solo dominio fuente)
"""
from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from app.autodiff import ops
from app.autodiff.losses import binary_cross_entropy, smooth_l1, softmax_cross_entropy
from app.autodiff.tensor import Tensor
from app.core.exceptions import ConfigurationError, HiddenAnnotationError
from app.detector.boxes import encode_boxes, iou_matrix
from app.detector.model import DetectorOutput, MiniDetector
from app.scenegen.audit import annotation_audit
from app.scenegen.render import AnnotationSet
from app.schemas.common import Domain


@dataclass
class AnchorTargets:
    labels: np.ndarray  # 1 positivo, 0 negativo, -1 ignorado
    matched_gt: np.ndarray  # índice de GT asignado, -1 si ninguno

    @property
    def positive(self) -> np.ndarray:
        return self.labels == 1

    @property
    def labeled(self) -> np.ndarray:
        return self.labels >= 0


@dataclass
class RoiTargets:
    labels: np.ndarray  # 0 fondo, 1..K clase
    box_targets: np.ndarray
    positive: np.ndarray


@dataclass
class DetectionLoss:
    rpn_objectness: Tensor
    rpn_box: Tensor
    roi_cls: Tensor
    roi_box: Tensor
    total: Tensor

    def as_floats(self) -> Dict[str, float]:
        return {
            "rpn_objectness": self.rpn_objectness.item(),
            "rpn_box": self.rpn_box.item(),
            "roi_cls": self.roi_cls.item(),
            "roi_box": self.roi_box.item(),
            "total": self.total.item(),
        }


def match_anchors(
    anchors: np.ndarray,
    gt_boxes: np.ndarray,
    positive_iou: float = 0.5,
    negative_iou: float = 0.3,
) -> AnchorTargets:
    """
    Etiquetar anclas

    IoU >= positive_iou: positiva; IoU < negative_iou: negativa; el resto se
    ignora. Además, las anclas con el IoU máximo de cada GT son positivas
    (todas las empatadas).
    """
    n = anchors.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    if len(gt_boxes) == 0:
        labels[:] = 0
        return AnchorTargets(labels=labels, matched_gt=matched)

    ious = iou_matrix(anchors, gt_boxes)
    best = ious.max(axis=1)
    arg = ious.argmax(axis=1)
    labels[best < negative_iou] = 0
    positive = best >= positive_iou
    labels[positive] = 1
    matched[positive] = arg[positive]

    gt_best = ious.max(axis=0)
    for g in range(ious.shape[1]):
        if gt_best[g] <= 0:
            continue
        winners = np.flatnonzero(ious[:, g] == gt_best[g])
        labels[winners] = 1
        matched[winners] = np.where(matched[winners] >= 0, matched[winners], g)
    return AnchorTargets(labels=labels, matched_gt=matched)


def assign_roi_targets(
    rois: np.ndarray,
    gt_boxes: np.ndarray,
    gt_labels: np.ndarray,
    positive_iou: float = 0.5,
) -> RoiTargets:
    r = rois.shape[0]
    labels = np.zeros(r, dtype=np.int64)
    targets = np.zeros((r, 4))
    positive = np.zeros(r, dtype=bool)
    if r and len(gt_boxes):
        ious = iou_matrix(rois, gt_boxes)
        best, arg = ious.max(axis=1), ious.argmax(axis=1)
        positive = best >= positive_iou
        labels[positive] = gt_labels[arg[positive]]
        if positive.any():
            targets[positive] = encode_boxes(rois[positive], gt_boxes[arg[positive]])
    return RoiTargets(labels=labels, box_targets=targets, positive=positive)


def _zero() -> Tensor:
    return Tensor(np.asarray(0.0))


def detection_loss(
    output: DetectorOutput,
    annotations: AnnotationSet,
    detector: MiniDetector,
) -> DetectionLoss:
    """
    L_DET = BCE objectness + SmoothL1 RPN + CE de la cabeza ROI + SmoothL1 ROI

    Los términos RPN se normalizan por el número de anclas etiquetadas y los
    términos ROI por el número de ROIs.

    Raises:
        HiddenAnnotationError: si las anotaciones no son del dominio fuente
    """
    if annotations.domain is not Domain.SOURCE:
        annotation_audit.record_target_read()
        raise HiddenAnnotationError("detection_loss solo acepta anotaciones del dominio fuente")

    settings = detector.settings
    gt_boxes = annotations.boxes
    unknown = [int(c) for c in annotations.class_ids if int(c) not in detector.label_of]
    if unknown:
        raise ConfigurationError(f"Clases fuera del espacio de la fuente: {unknown}")
    gt_labels = np.array([detector.label_of[int(c)] for c in annotations.class_ids], dtype=np.int64)

    anchors = detector.anchors.boxes()
    targets = match_anchors(anchors, gt_boxes, settings.positive_iou, settings.negative_iou)
    labeled = targets.labeled.astype(np.float64)
    positive = targets.positive
    n_labeled = max(1.0, float(labeled.sum()))

    rpn_objectness = ops.scale(
        binary_cross_entropy(output.rpn.objectness, positive.astype(np.float64), weight=labeled),
        1.0 / n_labeled,
    )
    rpn_targets = np.zeros((anchors.shape[0], 4))
    if positive.any():
        rpn_targets[positive] = encode_boxes(anchors[positive], gt_boxes[targets.matched_gt[positive]])
    rpn_box = ops.scale(
        smooth_l1(output.rpn.deltas, rpn_targets, weight=np.repeat(positive[:, None], 4, axis=1).astype(np.float64)),
        1.0 / n_labeled,
    )

    if output.cls_logits is None:
        roi_cls, roi_box = _zero(), _zero()
    else:
        roi = assign_roi_targets(output.rois, gt_boxes, gt_labels, settings.roi_positive_iou)
        n_rois = float(output.rois.shape[0])
        roi_cls = ops.scale(softmax_cross_entropy(output.cls_logits, roi.labels), 1.0 / n_rois)
        roi_box = ops.scale(
            smooth_l1(
                output.box_deltas,
                roi.box_targets,
                weight=np.repeat(roi.positive[:, None], 4, axis=1).astype(np.float64),
            ),
            1.0 / n_rois,
        )

    total = ops.add(ops.add(rpn_objectness, rpn_box), ops.add(roi_cls, roi_box))
    return DetectionLoss(
        rpn_objectness=rpn_objectness,
        rpn_box=rpn_box,
        roi_cls=roi_cls,
        roi_box=roi_box,
        total=total,
    )
