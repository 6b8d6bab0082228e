import hashlib
import json
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, Field, model_validator

from app.schemas.common import Method
from app.schemas.manifest import DatasetManifest
from app.schemas.metrics import MetricsReport


class DetectorSettings(BaseModel):
    image_size: int = 64
    channels: List[int] = Field(default_factory=lambda: [16, 32, 32], min_length=1)
    anchor_sides: List[float] = Field(default_factory=lambda: [6.0, 16.0, 40.0], min_length=1)
    pre_nms_top_n: int = Field(128, ge=1)
    rpn_nms_iou: float = Field(0.7, gt=0.0, le=1.0)
    top_k: int = Field(32, ge=0)
    min_box_side: float = Field(1.0, gt=0.0)
    roi_pool_size: int = Field(4, ge=1)
    roi_hidden: int = Field(64, ge=1)
    positive_iou: float = Field(0.5, gt=0.0, le=1.0)
    negative_iou: float = Field(0.3, ge=0.0, le=1.0)
    roi_positive_iou: float = Field(0.5, gt=0.0, le=1.0)
    score_threshold: float = Field(0.05, ge=0.0, le=1.0)
    detection_nms_iou: float = Field(0.5, gt=0.0, le=1.0)
    max_detections: int = Field(50, ge=1)

    @property
    def feature_stride(self) -> int:
        """Cada capa convolucional reduce a la mitad"""
        return 2 ** len(self.channels)

    @model_validator(mode="after")
    def _check_geometry(self):
        if self.image_size % self.feature_stride:
            raise ValueError(
                f"image_size={self.image_size} no es múltiplo del stride {self.feature_stride}"
            )
        if self.negative_iou > self.positive_iou:
            raise ValueError("negative_iou no puede superar positive_iou")
        return self


class DiscriminatorSettings(BaseModel):
    image_hidden: int = Field(32, ge=1)
    instance_hidden: int = Field(64, ge=1)


class ExperimentConfig(BaseModel):
    """Descripción declarativa de una corrida o familia de corridas"""
    name: str = "experiment"
    preset: Optional[str] = None
    manifest: DatasetManifest = Field(default_factory=DatasetManifest)
    method: Method = Method.USDAF
    eta: float = Field(0.01, ge=0.0)
    m: float = Field(0.3, gt=0.0, le=0.5)
    learning_rate: float = Field(0.001, gt=0.0)
    lr_drop_factor: float = Field(10.0, ge=1.0)
    lr_drop_step: int = Field(3000, ge=0)
    total_steps: int = Field(6000, ge=1)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(0.0005, ge=0.0)
    grl_ramp: bool = False
    image_label_min_score: float = Field(0.5, ge=0.0, le=1.0)
    seeds: List[int] = Field(default_factory=lambda: [1, 2, 3], min_length=1)
    output_dir: Optional[Path] = None
    log_every: int = Field(100, ge=1)
    detector: DetectorSettings = Field(default_factory=DetectorSettings)
    discriminator: DiscriminatorSettings = Field(default_factory=DiscriminatorSettings)

    @model_validator(mode="after")
    def _check_schedule(self):
        if self.lr_drop_step >= self.total_steps:
            raise ValueError(
                f"lr_drop_step ({self.lr_drop_step}) debe ser menor que total_steps ({self.total_steps})"
            )
        if self.detector.image_size != self.manifest.image_size:
            raise ValueError("detector.image_size debe coincidir con manifest.image_size")
        return self

    def learning_rate_at(self, step: int) -> float:
        if step < self.lr_drop_step:
            return self.learning_rate
        return self.learning_rate / self.lr_drop_factor

    def config_hash(self) -> str:
        """SHA-256 del JSON canónico (sin output_dir)"""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class LossSample(BaseModel):
    step: int
    learning_rate: float
    total: float
    detection: float
    unida: float = 0.0
    image_kept: int = 0
    image_total: int = 0
    instance_kept: int = 0
    instance_total: int = 0


class RunRecord(BaseModel):
    config_hash: str
    config: ExperimentConfig
    seed: int
    run_dir: Path
    checkpoint_path: Path
    loss_curve: List[LossSample] = Field(default_factory=list)
    metrics: MetricsReport
    wall_time_s: float = 0.0
    target_annotation_reads: int = 0

    def hash_matches(self) -> bool:
        return self.config.config_hash() == self.config_hash
