from pydantic import BaseModel, Field
from typing import Dict, List, Optional

from app.schemas.common import Method, ScaleBucket


class GroupMeans(BaseModel):
    """Medias del d0 predicho por instancia, agrupadas por dominio y tipo de clase"""
    src_private: Optional[float] = None
    src_common: Optional[float] = None
    tgt_common: Optional[float] = None
    tgt_private: Optional[float] = None
    counts: Dict[str, int] = Field(default_factory=dict)

    @property
    def ordering_holds(self) -> Optional[bool]:
        """src_private < src_common < tgt_common < tgt_private sobre los grupos presentes"""
        present = [
            v for v in (self.src_private, self.src_common, self.tgt_common, self.tgt_private)
            if v is not None
        ]
        if len(present) < 2:
            return None
        return all(a < b for a, b in zip(present, present[1:]))


class RunMetadata(BaseModel):
    name: str
    preset: Optional[str] = None
    method: Method
    seed: int
    config_hash: str


class MetricsReport(BaseModel):
    """
    Resultado de evaluación de una corrida

    No incluye tiempos de reloj: dos corridas con la misma configuración y
    semilla producen reportes idénticos.
    """
    per_class_ap: Dict[int, Optional[float]]
    common_classes: List[int]
    mean_ap: float
    per_scale_map: Dict[ScaleBucket, Optional[float]]
    num_gt: Dict[int, int] = Field(default_factory=dict)
    num_detections: int = 0
    baseline: Optional[str] = None
    gains_vs_baseline: Optional[Dict[int, float]] = None
    group_means: Optional[GroupMeans] = None
    metadata: Optional[RunMetadata] = None


class NegativeTransferReport(BaseModel):
    adapted: str
    baseline: str
    gains: Dict[int, float]
    negative_classes: List[int]
    adapted_map: float
    baseline_map: float
    map_gain: float
    relative_improvement: Optional[float] = None
