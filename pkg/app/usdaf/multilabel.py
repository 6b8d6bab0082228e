"""
Etiquetas multi-etiqueta dominio+escala y mecanismo de filtrado por confianza
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.autodiff import ops
from app.autodiff.losses import binary_cross_entropy
from app.autodiff.tensor import Tensor
from app.core.exceptions import ConfigurationError, ShapeMismatchError
from app.schemas.common import Domain, ScaleBucket

SCALE_ENTRIES = 4
DOMAIN_ENTRIES = 1


@dataclass(frozen=True)
class MultiLabelVector:
    """Etiqueta [d, small, medium, large]; ``excluded`` marca entradas sin pérdida"""
    values: np.ndarray
    excluded: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.excluded.shape:
            raise ShapeMismatchError("values y excluded deben tener la misma forma")

    @property
    def domain_entry(self) -> float:
        return float(self.values[0])


def encode_multilabel(
    domain: Domain,
    bucket: Optional[ScaleBucket] = None,
    entries: int = SCALE_ENTRIES,
) -> MultiLabelVector:
    """
    (Source, Small) -> [0,1,0,0] ... (Target, Large) -> [1,0,0,1]

    Sin cubeta: [d,0,0,0] con las entradas de escala excluidas. Con
    ``entries=1`` solo se codifica el dominio.
    """
    domain = Domain(domain)
    if entries == DOMAIN_ENTRIES:
        return MultiLabelVector(
            values=np.array([float(domain.label)]), excluded=np.zeros(1, dtype=bool)
        )
    if entries != SCALE_ENTRIES:
        raise ConfigurationError(f"entries debe ser 1 o 4, se recibió {entries}")
    values = np.zeros(SCALE_ENTRIES)
    values[0] = domain.label
    excluded = np.zeros(SCALE_ENTRIES, dtype=bool)
    if bucket is None:
        excluded[1:] = True
    else:
        values[ScaleBucket(bucket).entry] = 1.0
    return MultiLabelVector(values=values, excluded=excluded)


def stack_labels(labels: Sequence[MultiLabelVector], entries: int):
    if not labels:
        return np.zeros((0, entries)), np.zeros((0, entries), dtype=bool)
    return (
        np.stack([label.values for label in labels]),
        np.stack([label.excluded for label in labels]),
    )


@dataclass(frozen=True)
class FilterConfig:
    m: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.m <= 0.5:
            raise ConfigurationError(f"m debe estar en (0, 0.5], se recibió {self.m}")


def filter_keep(d0: float, m: float) -> bool:
    """Conservar si |d0 - 0.5| < m (desigualdad estricta)"""
    return abs(float(d0) - 0.5) < m


def keep_mask(d0: np.ndarray, filter_config: Optional[FilterConfig]) -> np.ndarray:
    d0 = np.asarray(d0, dtype=np.float64)
    if filter_config is None:
        return np.ones(d0.shape, dtype=bool)
    return np.abs(d0 - 0.5) < filter_config.m


@dataclass
class AlignmentLoss:
    loss: Tensor
    kept: int
    total: int


def masked_alignment_loss(
    preds: Tensor,
    labels: np.ndarray,
    excluded: np.ndarray,
    filter_config: Optional[FilterConfig] = None,
) -> AlignmentLoss:
    """
    BCE multi-etiqueta enmascarada, con conteo de ítems conservados

    Por cada ítem conservado por el filtro (evaluado sobre la entrada 0 de la
    predicción) se suma la BCE de sus entradas no excluidas; los ítems
    descartados aportan exactamente cero. El total se divide por
    max(1, conservados).
    """
    labels = np.asarray(labels, dtype=np.float64)
    excluded = np.asarray(excluded, dtype=bool)
    if preds.ndim != 2 or labels.shape != preds.shape or excluded.shape != preds.shape:
        raise ShapeMismatchError(
            f"multilabel_da_loss: predicciones {preds.shape}, etiquetas {labels.shape}, "
            f"exclusiones {excluded.shape}"
        )
    keep = keep_mask(preds.values[:, 0], filter_config)
    weight = (keep[:, None] & ~excluded).astype(np.float64)
    kept = int(keep.sum())
    loss = ops.scale(binary_cross_entropy(preds, labels, weight=weight), 1.0 / max(1, kept))
    return AlignmentLoss(loss=loss, kept=kept, total=int(preds.shape[0]))


def multilabel_da_loss(
    preds: Tensor,
    labels: np.ndarray,
    excluded: np.ndarray,
    filter_config: Optional[FilterConfig] = None,
) -> Tensor:
    return masked_alignment_loss(preds, labels, excluded, filter_config).loss
