from dataclasses import dataclass

import numpy as np

from app.detector.boxes import iou_matrix


@dataclass
class MatchResult:
    """
    Resultado de emparejar detecciones de una clase contra sus GT

    ``tp`` y ``matched_gt`` siguen el orden de entrada de las detecciones.
    """
    tp: np.ndarray
    matched_gt: np.ndarray
    gt_matched: np.ndarray

    @property
    def num_tp(self) -> int:
        return int(self.tp.sum())


def match_detections(
    det_boxes,
    confidences,
    gt_boxes,
    iou_threshold: float = 0.5,
) -> MatchResult:
    """
    Emparejamiento voraz por confianza descendente (empates: menor índice)

    Cada detección toma la GT libre de mayor IoU si alcanza el umbral; cada
    GT se empareja a lo sumo una vez.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    confidences = np.asarray(confidences, dtype=np.float64).reshape(-1)
    n, g = det_boxes.shape[0], gt_boxes.shape[0]
    tp = np.zeros(n, dtype=bool)
    matched = np.full(n, -1, dtype=np.int64)
    gt_matched = np.zeros(g, dtype=bool)
    if n == 0 or g == 0:
        return MatchResult(tp=tp, matched_gt=matched, gt_matched=gt_matched)

    ious = iou_matrix(det_boxes, gt_boxes)
    for i in np.argsort(-confidences, kind="stable"):
        candidates = np.where(gt_matched, -1.0, ious[i])
        best = int(np.argmax(candidates))
        if candidates[best] >= iou_threshold:
            tp[i] = True
            matched[i] = best
            gt_matched[best] = True
    return MatchResult(tp=tp, matched_gt=matched, gt_matched=gt_matched)
