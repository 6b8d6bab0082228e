"""
Pérdidas de alineamiento adversarial a nivel imagen e instancia
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.autodiff import ops
from app.autodiff.tensor import Tensor
from app.core.exceptions import ShapeMismatchError
from app.detector.boxes import iou_matrix
from app.detector.model import DetectorOutput
from app.scenegen.render import AnnotationSet
from app.schemas.common import Domain, ScaleBucket
from app.usdaf.discriminators import DiscriminatorHeads
from app.usdaf.multilabel import (
    AlignmentLoss,
    FilterConfig,
    encode_multilabel,
    masked_alignment_loss,
    stack_labels,
)
from app.usdaf.scale import REFERENCE_SIDE_PX, bucket_of_box


@dataclass(frozen=True)
class AdaptationPlan:
    """Cómo alinea un método: salidas del discriminador, filtro y coeficiente η"""
    entries: int
    filter_config: Optional[FilterConfig]
    eta: float


@dataclass
class LocationLabels:
    labels: np.ndarray
    excluded: np.ndarray


@dataclass
class UniDALosses:
    image: AlignmentLoss
    instance: AlignmentLoss
    total: Tensor


def build_location_labels(
    domain: Domain,
    boxes: np.ndarray,
    feature_size: int,
    stride: int,
    entries: int = 4,
    image_size: int = 64,
    reference_side_px: float = REFERENCE_SIDE_PX,
) -> LocationLabels:
    """
    Etiqueta por ubicación (u, v) del mapa de features

    Cada celda toma la cubeta de la caja de mayor IoU entre las que la
    intersectan; las celdas sin caja conservan solo la entrada de dominio.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    ys, xs = np.meshgrid(np.arange(feature_size), np.arange(feature_size), indexing="ij")
    cells = np.stack(
        [xs * stride, ys * stride, (xs + 1) * stride, (ys + 1) * stride], axis=-1
    ).reshape(-1, 4).astype(np.float64)

    bucket_per_cell: List[Optional[ScaleBucket]] = [None] * len(cells)
    if entries > 1 and len(boxes):
        overlaps = iou_matrix(cells, boxes)
        buckets = [bucket_of_box(b, image_size, reference_side_px) for b in boxes]
        for i in range(len(cells)):
            if overlaps[i].max() > 0:
                bucket_per_cell[i] = buckets[int(overlaps[i].argmax())]

    labels, excluded = stack_labels(
        [encode_multilabel(domain, bucket, entries) for bucket in bucket_per_cell], entries
    )
    return LocationLabels(labels=labels, excluded=excluded)


def image_level_loss(
    source_features: Tensor,
    target_features: Tensor,
    label_maps: Tuple[LocationLabels, LocationLabels],
    heads: DiscriminatorHeads,
    filter_config: Optional[FilterConfig] = None,
    coefficient: float = 0.01,
) -> AlignmentLoss:
    """Alineamiento por ubicación; las features llegan al discriminador a través de la GRL"""
    if source_features.shape != target_features.shape:
        raise ShapeMismatchError(
            f"Mapas de features con formas distintas: {source_features.shape} y {target_features.shape}"
        )
    preds = [
        heads.image_forward(ops.adversarial_bridge(features, coefficient))
        for features in (source_features, target_features)
    ]
    for pred, maps in zip(preds, label_maps):
        if pred.shape != maps.labels.shape:
            raise ShapeMismatchError(
                f"Etiquetas de ubicación {maps.labels.shape} para predicciones {pred.shape}"
            )
    return masked_alignment_loss(
        ops.concat_rows(preds),
        np.concatenate([m.labels for m in label_maps], axis=0),
        np.concatenate([m.excluded for m in label_maps], axis=0),
        filter_config,
    )


def source_instance_buckets(
    proposal_boxes: np.ndarray,
    gt_boxes: np.ndarray,
    image_size: int = 64,
    reference_side_px: float = REFERENCE_SIDE_PX,
    positive_iou: float = 0.5,
) -> List[ScaleBucket]:
    """Cubeta de la GT emparejada (IoU >= 0.5) o, si no hay, de la propia propuesta"""
    proposal_boxes = np.asarray(proposal_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    overlaps = iou_matrix(proposal_boxes, gt_boxes)
    buckets = []
    for i, box in enumerate(proposal_boxes):
        if len(gt_boxes) and overlaps[i].max() >= positive_iou:
            box = gt_boxes[int(overlaps[i].argmax())]
        buckets.append(bucket_of_box(box, image_size, reference_side_px))
    return buckets


def target_instance_buckets(
    proposal_boxes: np.ndarray,
    image_size: int = 64,
    reference_side_px: float = REFERENCE_SIDE_PX,
) -> List[ScaleBucket]:
    proposal_boxes = np.asarray(proposal_boxes, dtype=np.float64).reshape(-1, 4)
    return [bucket_of_box(box, image_size, reference_side_px) for box in proposal_boxes]


def instance_level_loss(
    source_roi_features: Tensor,
    source_buckets: Sequence[ScaleBucket],
    target_roi_features: Tensor,
    target_buckets: Sequence[ScaleBucket],
    heads: DiscriminatorHeads,
    filter_config: Optional[FilterConfig] = None,
    coefficient: float = 0.01,
) -> AlignmentLoss:
    """Alineamiento por propuesta; sin propuestas en ningún dominio la pérdida es 0"""
    if source_roi_features.shape[0] != len(source_buckets) or target_roi_features.shape[0] != len(target_buckets):
        raise ShapeMismatchError("Cada propuesta necesita su cubeta de escala")
    if source_roi_features.shape[0] + target_roi_features.shape[0] == 0:
        return AlignmentLoss(loss=Tensor(np.asarray(0.0)), kept=0, total=0)

    preds, labels = [], []
    for domain, feats, buckets in (
        (Domain.SOURCE, source_roi_features, source_buckets),
        (Domain.TARGET, target_roi_features, target_buckets),
    ):
        preds.append(heads.instance_forward(ops.adversarial_bridge(feats, coefficient)))
        labels.extend(encode_multilabel(domain, b, heads.entries) for b in buckets)
    values, excluded = stack_labels(labels, heads.entries)
    return masked_alignment_loss(ops.concat_rows(preds), values, excluded, filter_config)


def unida_loss(image_loss: Tensor, instance_loss: Tensor) -> Tensor:
    return ops.add(image_loss, instance_loss)


def total_objective(detection_loss: Tensor, unida: Tensor) -> Tensor:
    """
    Escalar único a minimizar: L_DET + L_UniDA

    El signo adversarial lo aporta la GRL en los caminos hacia los
    discriminadores: estos minimizan L_UniDA y las features reciben
    -η veces su gradiente.
    """
    return ops.add(detection_loss, unida)


def adaptation_losses(
    source_output: DetectorOutput,
    target_output: DetectorOutput,
    source_annotations: AnnotationSet,
    heads: DiscriminatorHeads,
    plan: AdaptationPlan,
    coefficient: float,
    stride: int,
    image_size: int = 64,
    reference_side_px: float = REFERENCE_SIDE_PX,
    image_label_min_score: float = 0.5,
) -> UniDALosses:
    """
    Ensamblar L_UniDA de un par fuente/objetivo

    Las etiquetas de escala salen de las GT en la fuente y de las propuestas
    con objectness >= ``image_label_min_score`` en el objetivo.
    """
    feature_size = source_output.features.shape[-1]
    target_label_boxes = target_output.proposal_boxes[
        target_output.proposal_scores >= image_label_min_score
    ]
    maps = (
        build_location_labels(
            Domain.SOURCE, source_annotations.boxes, feature_size, stride,
            plan.entries, image_size, reference_side_px,
        ),
        build_location_labels(
            Domain.TARGET, target_label_boxes, feature_size, stride,
            plan.entries, image_size, reference_side_px,
        ),
    )
    image = image_level_loss(
        source_output.features, target_output.features, maps, heads, plan.filter_config, coefficient
    )
    instance = instance_level_loss(
        source_output.proposal_features,
        source_instance_buckets(
            source_output.proposal_boxes, source_annotations.boxes, image_size, reference_side_px
        ),
        target_output.proposal_features,
        target_instance_buckets(target_output.proposal_boxes, image_size, reference_side_px),
        heads,
        plan.filter_config,
        coefficient,
    )
    return UniDALosses(image=image, instance=instance, total=unida_loss(image.loss, instance.loss))
