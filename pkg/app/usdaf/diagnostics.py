"""
Diagnóstico de la hipótesis de ordenamiento del discriminador de instancia
"""
from typing import Dict, Iterable, List

import numpy as np

from app.detector.model import MiniDetector
from app.logger import get_logger
from app.scenegen.label_spaces import LabelSpaceConfig
from app.scenegen.render import SceneSample
from app.schemas.common import Domain
from app.schemas.metrics import GroupMeans
from app.usdaf.discriminators import DiscriminatorHeads

logger = get_logger()

GROUPS = ("src_private", "src_common", "tgt_common", "tgt_private")


def _group_of(domain: Domain, is_common: bool) -> str:
    prefix = "src" if domain is Domain.SOURCE else "tgt"
    return f"{prefix}_{'common' if is_common else 'private'}"


def instance_domain_scores(
    detector: MiniDetector,
    heads: DiscriminatorHeads,
    samples: Iterable[SceneSample],
) -> List[tuple]:
    """(dominio, class_id, d0) por cada instancia anotada; acceso del lado de evaluación"""
    rows = []
    for sample in samples:
        annotations = sample.evaluation_annotations()
        if not annotations:
            continue
        boxes = np.array([a.box for a in annotations], dtype=np.float64)
        features = detector.backbone_forward(sample.image)
        d0 = heads.instance_forward(detector.roi_features(features, boxes)).values[:, 0]
        rows.extend((sample.domain, a.class_id, float(v)) for a, v in zip(annotations, d0))
    return rows


def discriminator_group_means(
    detector: MiniDetector,
    heads: DiscriminatorHeads,
    source_samples: Iterable[SceneSample],
    target_samples: Iterable[SceneSample],
    label_space: LabelSpaceConfig,
) -> GroupMeans:
    """
    Media de d0 por grupo (src_private, src_common, tgt_common, tgt_private)

    Un grupo sin instancias queda ausente (None).
    """
    common = set(label_space.common)
    values: Dict[str, List[float]] = {group: [] for group in GROUPS}
    for samples in (source_samples, target_samples):
        for domain, class_id, d0 in instance_domain_scores(detector, heads, samples):
            values[_group_of(domain, class_id in common)].append(d0)

    means = {group: (float(np.mean(v)) if v else None) for group, v in values.items()}
    result = GroupMeans(**means, counts={group: len(v) for group, v in values.items()})
    logger.debug(f"Medias de d0 por grupo: {means} (orden cumplido: {result.ordering_holds})")
    return result
