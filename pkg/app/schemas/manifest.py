from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Dict, Optional, Tuple

from app.schemas.common import Domain, FillMode, Scenario


class DomainStyle(BaseModel):
    """Parámetros visuales de un dominio"""
    domain: Domain
    background: Tuple[float, float, float] = (0.12, 0.12, 0.14)
    fill_mode: FillMode = FillMode.SOLID
    noise: float = Field(0.02, ge=0.0, le=0.5)
    brightness: float = Field(0.0, ge=-0.5, le=0.5)
    haze: float = Field(0.0, ge=0.0, lt=1.0)

    @field_validator("background")
    @classmethod
    def _check_background(cls, value):
        if any(channel < 0.0 or channel > 1.0 for channel in value):
            raise ValueError("background debe estar en [0, 1]")
        return value

    def differing_parameters(self, other: "DomainStyle") -> int:
        """Número de parámetros visuales que difieren entre dos estilos"""
        fields = ("background", "fill_mode", "noise", "brightness", "haze")
        return sum(getattr(self, name) != getattr(other, name) for name in fields)


class ScaleMixture(BaseModel):
    """Pesos de muestreo de cubetas de escala"""
    small: float = Field(0.3, ge=0.0)
    medium: float = Field(0.5, ge=0.0)
    large: float = Field(0.2, ge=0.0)

    @model_validator(mode="after")
    def _check_total(self):
        if self.small + self.medium + self.large <= 0:
            raise ValueError("La mezcla de escalas necesita al menos un peso positivo")
        return self

    def probabilities(self) -> Tuple[float, float, float]:
        total = self.small + self.medium + self.large
        return (self.small / total, self.medium / total, self.large / total)


class LabelSpaceRequest(BaseModel):
    universe_size: int = Field(20, ge=2)
    scenario: Scenario = Scenario.OPEN_SET
    xi: float = Field(0.5, gt=0.0, le=1.0)
    seed: int = Field(0, ge=0)


class SplitCounts(BaseModel):
    source_train: int = Field(800, ge=0)
    target_train: int = Field(800, ge=0)
    target_test: int = Field(200, ge=0)
    source_test: int = Field(200, ge=0)


def _default_styles() -> Dict[Domain, DomainStyle]:
    return {
        Domain.SOURCE: DomainStyle(domain=Domain.SOURCE),
        Domain.TARGET: DomainStyle(
            domain=Domain.TARGET,
            background=(0.55, 0.5, 0.42),
            fill_mode=FillMode.TEXTURED,
            noise=0.08,
            brightness=0.05,
        ),
    }


def _default_mixtures() -> Dict[Domain, ScaleMixture]:
    return {
        Domain.SOURCE: ScaleMixture(),
        Domain.TARGET: ScaleMixture(small=0.5, medium=0.4, large=0.1),
    }


class DatasetManifest(BaseModel):
    """Manifiesto completo de un dataset sintético de dos dominios"""
    seed: int = Field(0, ge=0)
    image_size: int = Field(64, ge=16)
    max_objects: int = Field(6, ge=0, le=6)
    reference_side_px: float = Field(200.0, gt=0.0)
    coverage_budget: float = Field(0.35, gt=0.0, le=1.0)
    max_overlap_iou: float = Field(0.2, ge=0.0, le=1.0)
    scale_shift: bool = False
    label_space: LabelSpaceRequest = Field(default_factory=LabelSpaceRequest)
    counts: SplitCounts = Field(default_factory=SplitCounts)
    styles: Dict[Domain, DomainStyle] = Field(default_factory=_default_styles)
    scale_mixtures: Dict[Domain, ScaleMixture] = Field(default_factory=_default_mixtures)

    @model_validator(mode="after")
    def _check_domains(self):
        for domain in Domain:
            if domain not in self.styles:
                raise ValueError(f"Falta el estilo del dominio {domain.value}")
            if domain not in self.scale_mixtures:
                raise ValueError(f"Falta la mezcla de escalas del dominio {domain.value}")
            if self.styles[domain].domain != domain:
                raise ValueError(f"El estilo registrado en {domain.value} declara otro dominio")
        source, target = self.styles[Domain.SOURCE], self.styles[Domain.TARGET]
        if source.differing_parameters(target) < 2:
            raise ValueError("Los estilos fuente y objetivo deben diferir en al menos dos parámetros")
        return self

    def mixture_for(self, domain: Domain) -> ScaleMixture:
        """Mezcla efectiva: sin desplazamiento de escala ambos dominios usan la de la fuente"""
        if not self.scale_shift:
            return self.scale_mixtures[Domain.SOURCE]
        return self.scale_mixtures[domain]

    def count_for(self, domain: Domain, split: str) -> int:
        return getattr(self.counts, f"{domain.value}_{split}")


class SplitSummary(BaseModel):
    domain: Domain
    split: str
    images: int
    objects: int
    mean_area: Optional[float] = None
    bucket_fractions: Dict[str, float] = Field(default_factory=dict)
    class_counts: Dict[int, int] = Field(default_factory=dict)
    checksum: str
