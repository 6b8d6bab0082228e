"""
Cubetas de escala sobre áreas normalizadas

Los umbrales 20² y 100² están definidos a la escala de operación de 600 px;
las áreas medidas en la imagen pequeña se llevan a esa escala multiplicando
por (reference_side_px / image_size)² antes de compararlas.
"""
from typing import Sequence, Tuple

from app.core.exceptions import ConfigurationError
from app.schemas.common import ScaleBucket

SMALL_MAX_AREA = 20.0 ** 2
LARGE_MIN_AREA = 100.0 ** 2
REFERENCE_SIDE_PX = 600.0
DEFAULT_IMAGE_SIZE = 64


def normalize_area(
    area_px: float,
    image_size: int = DEFAULT_IMAGE_SIZE,
    reference_side_px: float = REFERENCE_SIDE_PX,
) -> float:
    factor = (float(reference_side_px) / float(image_size)) ** 2
    return float(area_px) * factor


def scale_bucket(area: float) -> ScaleBucket:
    """
    Cubeta de un área ya normalizada

    Small: < 400; Medium: [400, 10000] cerrado; Large: > 10000.
    """
    if not area > 0:
        raise ConfigurationError(f"scale_bucket requiere área > 0, se recibió {area}")
    if area < SMALL_MAX_AREA:
        return ScaleBucket.SMALL
    if area <= LARGE_MIN_AREA:
        return ScaleBucket.MEDIUM
    return ScaleBucket.LARGE


def box_area(box: Sequence[float]) -> float:
    x1, y1, x2, y2 = box
    return max(0.0, float(x2) - float(x1)) * max(0.0, float(y2) - float(y1))


def bucket_of_box(
    box: Sequence[float],
    image_size: int = DEFAULT_IMAGE_SIZE,
    reference_side_px: float = REFERENCE_SIDE_PX,
) -> ScaleBucket:
    return scale_bucket(normalize_area(box_area(box), image_size, reference_side_px))


def raw_thresholds(
    image_size: int = DEFAULT_IMAGE_SIZE,
    reference_side_px: float = REFERENCE_SIDE_PX,
) -> Tuple[float, float]:
    """Umbrales (small_max, large_min) expresados en píxeles² de la imagen"""
    factor = (float(reference_side_px) / float(image_size)) ** 2
    return SMALL_MAX_AREA / factor, LARGE_MIN_AREA / factor
