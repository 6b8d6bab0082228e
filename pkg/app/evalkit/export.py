"""
Exportación de features de instancia a CSV para herramientas externas de embedding
"""
from pathlib import Path
from typing import Iterable, List

import numpy as np
import pandas as pd

from app.detector.model import MiniDetector
from app.logger import get_logger
from app.scenegen.label_spaces import LabelSpaceConfig
from app.scenegen.render import SceneSample
from app.usdaf.scale import REFERENCE_SIDE_PX, bucket_of_box

logger = get_logger()

BASE_COLUMNS = ["domain", "image_index", "class_id", "is_common", "bucket"]


def feature_columns(dim: int) -> List[str]:
    return BASE_COLUMNS + [f"f{i}" for i in range(dim)]


def export_instance_features(
    detector: MiniDetector,
    samples: Iterable[SceneSample],
    label_space: LabelSpaceConfig,
    path: Path,
    reference_side_px: float = REFERENCE_SIDE_PX,
) -> Path:
    """
    Una fila por instancia anotada, en el orden de las muestras y anotaciones

    Las features son el pooling ROI de la caja GT sobre el mapa del backbone.
    """
    path = Path(path)
    image_size = detector.settings.image_size
    common = set(label_space.common)
    rows = []
    for sample in samples:
        annotations = sample.evaluation_annotations()
        if not annotations:
            continue
        boxes = np.array([a.box for a in annotations], dtype=np.float64)
        features = detector.roi_features(detector.backbone_forward(sample.image), boxes).values
        for ann, vector in zip(annotations, features):
            rows.append(
                [
                    sample.domain.value,
                    sample.index,
                    ann.class_id,
                    int(ann.class_id in common),
                    bucket_of_box(ann.box, image_size, reference_side_px).value,
                    *vector.tolist(),
                ]
            )

    frame = pd.DataFrame(rows, columns=feature_columns(detector.roi_dim))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as e:
        logger.error(f"Error exportando features a {path}: {e}")
        raise
    logger.info(f"{len(frame)} instancias exportadas a {path}")
    return path
