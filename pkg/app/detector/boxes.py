"""
Geometría de cajas: IoU, codificación de deltas, recorte y NMS

Cajas en píxeles (x_min, y_min, x_max, y_max); ancho = x_max - x_min.
"""
from typing import Sequence

import numpy as np

from app.core.exceptions import ConfigurationError

# Límite de tw/th al decodificar
BBOX_LOG_CLIP = float(np.log(1000.0 / 16.0))


def _as_boxes(boxes) -> np.ndarray:
    return np.asarray(boxes, dtype=np.float64).reshape(-1, 4)


def box_areas(boxes) -> np.ndarray:
    b = _as_boxes(boxes)
    return np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)


def iou_matrix(a, b) -> np.ndarray:
    a, b = _as_boxes(a), _as_boxes(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = box_areas(a)[:, None] + box_areas(b)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    return float(iou_matrix(a, b)[0, 0])


def _check_positive(boxes: np.ndarray, what: str) -> None:
    if np.any(boxes[:, 2] - boxes[:, 0] <= 0) or np.any(boxes[:, 3] - boxes[:, 1] <= 0):
        raise ConfigurationError(f"{what} degenerada: ancho y alto deben ser positivos")


def encode_boxes(anchors, gt) -> np.ndarray:
    """Deltas (tx, ty, tw, th) que llevan cada ancla a su caja"""
    a, g = _as_boxes(anchors), _as_boxes(gt)
    _check_positive(a, "Ancla")
    _check_positive(g, "Caja objetivo")
    aw, ah = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    acx, acy = a[:, 0] + 0.5 * aw, a[:, 1] + 0.5 * ah
    gw, gh = g[:, 2] - g[:, 0], g[:, 3] - g[:, 1]
    gcx, gcy = g[:, 0] + 0.5 * gw, g[:, 1] + 0.5 * gh
    return np.stack(
        [(gcx - acx) / aw, (gcy - acy) / ah, np.log(gw / aw), np.log(gh / ah)], axis=1
    )


def decode_boxes(anchors, deltas) -> np.ndarray:
    a = _as_boxes(anchors)
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    _check_positive(a, "Ancla")
    aw, ah = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    acx, acy = a[:, 0] + 0.5 * aw, a[:, 1] + 0.5 * ah
    tw = np.minimum(d[:, 2], BBOX_LOG_CLIP)
    th = np.minimum(d[:, 3], BBOX_LOG_CLIP)
    cx, cy = acx + d[:, 0] * aw, acy + d[:, 1] * ah
    w, h = aw * np.exp(tw), ah * np.exp(th)
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def box_encode(anchor: Sequence[float], gt: Sequence[float]) -> np.ndarray:
    return encode_boxes(anchor, gt)[0]


def box_transform(anchor: Sequence[float], delta: Sequence[float]) -> np.ndarray:
    return decode_boxes(anchor, delta)[0]


def clip_boxes(boxes, image_size: int) -> np.ndarray:
    return np.clip(_as_boxes(boxes), 0.0, float(image_size))


def nms(boxes, scores, iou_threshold: float = 0.5) -> np.ndarray:
    """
    Supresión no máxima voraz

    Orden descendente por score con empates resueltos por menor índice;
    se suprime toda caja con IoU > iou_threshold contra una caja ya aceptada.
    """
    b = _as_boxes(boxes)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if b.shape[0] != s.shape[0]:
        raise ConfigurationError(f"nms: {b.shape[0]} cajas y {s.shape[0]} scores")
    order = np.argsort(-s, kind="stable")
    keep = []
    while order.size:
        i = int(order[0])
        keep.append(i)
        if order.size == 1:
            break
        overlaps = iou_matrix(b[i], b[order[1:]])[0]
        order = order[1:][overlaps <= iou_threshold]
    return np.asarray(keep, dtype=np.int64)
