"""
Detector de dos etapas en miniatura

backbone (3 conv stride 2) -> RPN con anclas -> pooling ROI por vecino
más cercano -> cabeza ROI (clases de la fuente + fondo, deltas agnósticos).
"""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.autodiff import ops
from app.autodiff.losses import softmax
from app.autodiff.params import ParameterStore
from app.autodiff.tensor import Tensor
from app.core.exceptions import ConfigurationError, ShapeMismatchError
from app.detector.anchors import AnchorGrid
from app.detector.boxes import clip_boxes, decode_boxes, nms
from app.schemas.experiment import DetectorSettings


@dataclass
class Proposal:
    box: Tuple[float, float, float, float]
    score: float
    roi_feature: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Detection:
    box: Tuple[float, float, float, float]
    class_id: int
    confidence: float


@dataclass
class RpnOutput:
    objectness: Tensor  # (A·H·W,) probabilidades
    deltas: Tensor  # (A·H·W, 4)


@dataclass
class DetectorOutput:
    features: Tensor
    rpn: RpnOutput
    proposal_boxes: np.ndarray
    proposal_scores: np.ndarray
    proposal_features: Tensor
    rois: np.ndarray
    cls_logits: Optional[Tensor] = None
    box_deltas: Optional[Tensor] = None

    @property
    def num_proposals(self) -> int:
        return int(self.proposal_boxes.shape[0])

    def proposals(self) -> List[Proposal]:
        feats = self.proposal_features.values
        return [
            Proposal(
                box=tuple(float(v) for v in box),
                score=float(score),
                roi_feature=feats[i].copy(),
            )
            for i, (box, score) in enumerate(zip(self.proposal_boxes, self.proposal_scores))
        ]


class MiniDetector:
    """
    Detector que solo conoce las clases de la fuente

    Las etiquetas internas de la cabeza ROI son 0 = fondo y 1..K en el orden
    de ``classes``.
    """

    def __init__(
        self,
        source_classes: Sequence[int],
        settings: Optional[DetectorSettings] = None,
        seed: int = 0,
    ):
        if not source_classes:
            raise ConfigurationError("El detector necesita al menos una clase fuente")
        self.settings = settings or DetectorSettings()
        self.classes: Tuple[int, ...] = tuple(sorted(int(c) for c in source_classes))
        self.label_of: Dict[int, int] = {c: i + 1 for i, c in enumerate(self.classes)}
        self.anchors = AnchorGrid(
            image_size=self.settings.image_size,
            stride=self.settings.feature_stride,
            sides=tuple(self.settings.anchor_sides),
        )
        self.params = ParameterStore("det.")
        self._build(np.random.default_rng([seed, 1]))

    def _build(self, rng: np.random.Generator) -> None:
        s, p = self.settings, self.params
        in_ch = 3
        for i, out_ch in enumerate(s.channels):
            p.uniform(f"conv{i}.w", (out_ch, in_ch, 3, 3), in_ch * 9, rng)
            p.zeros(f"conv{i}.b", (out_ch,))
            in_ch = out_ch
        c, a = self.channels, self.anchors.num_anchors
        p.uniform("rpn.conv.w", (c, c, 3, 3), c * 9, rng)
        p.zeros("rpn.conv.b", (c,))
        p.uniform("rpn.obj.w", (a, c, 1, 1), c, rng)
        p.zeros("rpn.obj.b", (a,))
        p.uniform("rpn.delta.w", (4 * a, c, 1, 1), c, rng)
        p.zeros("rpn.delta.b", (4 * a,))
        d, h = self.roi_dim, s.roi_hidden
        p.uniform("roi.fc.w", (d, h), d, rng)
        p.zeros("roi.fc.b", (h,))
        p.uniform("roi.cls.w", (h, self.num_classes + 1), h, rng)
        p.zeros("roi.cls.b", (self.num_classes + 1,))
        p.uniform("roi.box.w", (h, 4), h, rng)
        p.zeros("roi.box.b", (4,))

    @property
    def channels(self) -> int:
        return self.settings.channels[-1]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def roi_dim(self) -> int:
        return self.channels * self.settings.roi_pool_size ** 2

    def backbone_forward(self, image: np.ndarray) -> Tensor:
        """Imagen (S, S, 3) en [0,1] -> mapa de features (1, C, S/8, S/8)"""
        size = self.settings.image_size
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (size, size, 3):
            raise ShapeMismatchError(f"Se esperaba una imagen ({size}, {size}, 3), se recibió {image.shape}")
        x = Tensor(image.transpose(2, 0, 1)[None])
        for i in range(len(self.settings.channels)):
            x = ops.relu(
                ops.conv_block(x, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"], stride=2, padding=1)
            )
        return x

    def rpn_forward(self, features: Tensor) -> RpnOutput:
        p = self.params
        a, hw = self.anchors.num_anchors, self.anchors.feature_size
        h = ops.relu(ops.conv_block(features, p["rpn.conv.w"], p["rpn.conv.b"], padding=1))
        obj = ops.sigmoid(ops.conv_block(h, p["rpn.obj.w"], p["rpn.obj.b"]))
        objectness = ops.reshape(obj, (a * hw * hw,))
        raw = ops.conv_block(h, p["rpn.delta.w"], p["rpn.delta.b"])
        deltas = ops.reshape(
            ops.transpose(ops.reshape(raw, (a, 4, hw, hw)), (0, 2, 3, 1)), (a * hw * hw, 4)
        )
        return RpnOutput(objectness=objectness, deltas=deltas)

    def select_proposals(
        self, rpn: RpnOutput, top_k: Optional[int] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Decodificar, recortar, filtrar tamaño, NMS y quedarse con top_k"""
        s = self.settings
        top_k = s.top_k if top_k is None else top_k
        if top_k <= 0:
            return np.zeros((0, 4)), np.zeros((0,))
        scores = rpn.objectness.values
        boxes = clip_boxes(decode_boxes(self.anchors.boxes(), rpn.deltas.values), s.image_size)
        valid = np.flatnonzero(
            (boxes[:, 2] - boxes[:, 0] >= s.min_box_side) & (boxes[:, 3] - boxes[:, 1] >= s.min_box_side)
        )
        order = valid[np.argsort(-scores[valid], kind="stable")][: s.pre_nms_top_n]
        keep = order[nms(boxes[order], scores[order], s.rpn_nms_iou)][:top_k]
        return boxes[keep], scores[keep]

    def roi_features(self, features: Tensor, boxes: np.ndarray) -> Tensor:
        """Pooling ROI por vecino más cercano a P×P, aplanado a (R, C·P·P)"""
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        pool, stride = self.settings.roi_pool_size, self.settings.feature_stride
        limit = features.shape[-1] - 1
        frac = (np.arange(pool) + 0.5) / pool
        ys = boxes[:, 1:2] + frac[None, :] * (boxes[:, 3:4] - boxes[:, 1:2])
        xs = boxes[:, 0:1] + frac[None, :] * (boxes[:, 2:3] - boxes[:, 0:1])
        rows = np.clip(np.floor(ys / stride), 0, limit).astype(np.int64)
        cols = np.clip(np.floor(xs / stride), 0, limit).astype(np.int64)
        rows = np.broadcast_to(rows[:, :, None], (len(boxes), pool, pool))
        cols = np.broadcast_to(cols[:, None, :], (len(boxes), pool, pool))
        pooled = ops.gather_cells(features, rows, cols)
        return ops.reshape(pooled, (len(boxes), self.roi_dim))

    def propose(self, features: Tensor, top_k: Optional[int] = None) -> List[Proposal]:
        boxes, scores = self.select_proposals(self.rpn_forward(features), top_k)
        feats = self.roi_features(features, boxes).values
        return [
            Proposal(box=tuple(float(v) for v in box), score=float(score), roi_feature=feats[i].copy())
            for i, (box, score) in enumerate(zip(boxes, scores))
        ]

    def roi_head(self, roi_feats: Tensor) -> Tuple[Tensor, Tensor]:
        p = self.params
        hidden = ops.relu(ops.linear(roi_feats, p["roi.fc.w"], p["roi.fc.b"]))
        return (
            ops.linear(hidden, p["roi.cls.w"], p["roi.cls.b"]),
            ops.linear(hidden, p["roi.box.w"], p["roi.box.b"]),
        )

    def forward(
        self,
        image: np.ndarray,
        extra_rois: Optional[np.ndarray] = None,
        top_k: Optional[int] = None,
    ) -> DetectorOutput:
        """
        Paso completo del detector

        ``extra_rois`` (cajas GT durante el entrenamiento) se agregan a las
        propuestas como ROIs adicionales de la cabeza.
        """
        features = self.backbone_forward(image)
        rpn = self.rpn_forward(features)
        boxes, scores = self.select_proposals(rpn, top_k)
        proposal_features = self.roi_features(features, boxes)
        rois, roi_feats = boxes, proposal_features
        if extra_rois is not None and len(extra_rois):
            extra = np.asarray(extra_rois, dtype=np.float64).reshape(-1, 4)
            rois = np.concatenate([boxes, extra], axis=0)
            roi_feats = ops.concat_rows([proposal_features, self.roi_features(features, extra)])
        cls_logits = box_deltas = None
        if len(rois):
            cls_logits, box_deltas = self.roi_head(roi_feats)
        return DetectorOutput(
            features=features,
            rpn=rpn,
            proposal_boxes=boxes,
            proposal_scores=scores,
            proposal_features=proposal_features,
            rois=rois,
            cls_logits=cls_logits,
            box_deltas=box_deltas,
        )

    def detect(self, image: np.ndarray) -> List[Detection]:
        """Detecciones finales: softmax, decodificación, NMS por clase"""
        s = self.settings
        out = self.forward(image)
        if out.cls_logits is None:
            return []
        probs = softmax(out.cls_logits.values)
        boxes = clip_boxes(decode_boxes(out.rois, out.box_deltas.values), s.image_size)
        valid = (boxes[:, 2] - boxes[:, 0] >= s.min_box_side) & (boxes[:, 3] - boxes[:, 1] >= s.min_box_side)
        detections: List[Detection] = []
        for label in range(1, self.num_classes + 1):
            idx = np.flatnonzero(valid & (probs[:, label] >= s.score_threshold))
            if idx.size == 0:
                continue
            keep = idx[nms(boxes[idx], probs[idx, label], s.detection_nms_iou)]
            detections.extend(
                Detection(
                    box=tuple(float(v) for v in boxes[i]),
                    class_id=self.classes[label - 1],
                    confidence=float(probs[i, label]),
                )
                for i in keep
            )
        detections.sort(key=lambda d: -d.confidence)
        return detections[: s.max_detections]

    def named_parameters(self) -> Dict[str, Tensor]:
        return self.params.named()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return self.params.state_arrays()

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        self.params.load_arrays(arrays)
