from app.detector.anchors import AnchorGrid
from app.detector.boxes import box_encode, box_transform, iou, nms
from app.detector.model import Detection, DetectorOutput, MiniDetector, Proposal

__all__ = [
    "AnchorGrid",
    "box_encode",
    "box_transform",
    "iou",
    "nms",
    "Detection",
    "DetectorOutput",
    "MiniDetector",
    "Proposal",
]
