"""
Renderizado de escenas sintéticas de formas primitivas
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from app.core.exceptions import ConfigurationError, HiddenAnnotationError, RenderError
from app.scenegen.audit import annotation_audit
from app.schemas.common import Domain, FillMode
from app.schemas.manifest import DomainStyle

Box = Tuple[float, float, float, float]

SHAPES = ("circle", "square", "triangle", "cross", "ring", "star", "diamond", "bar")

# Colores por variante (class_id // 8)
VARIANT_COLORS = (
    (0.95, 0.35, 0.20),
    (0.25, 0.55, 0.95),
    (0.30, 0.85, 0.35),
    (0.90, 0.80, 0.20),
    (0.80, 0.30, 0.85),
    (0.20, 0.85, 0.85),
    (0.98, 0.60, 0.70),
    (0.60, 0.45, 0.25),
)

BAR_ASPECT = 2
MIN_BOX_AREA = 16.0
MAX_PLACEMENT_ATTEMPTS = 10
FOG_COLOR = 0.75


def shape_of(class_id: int) -> str:
    return SHAPES[class_id % len(SHAPES)]


def color_of(class_id: int) -> Tuple[float, float, float]:
    return VARIANT_COLORS[(class_id // len(SHAPES)) % len(VARIANT_COLORS)]


@dataclass(frozen=True)
class ObjectSpec:
    """Objeto pedido: clase y extensión en píxeles (ancho, alto)"""
    class_id: int
    width: int
    height: int


@dataclass(frozen=True)
class Annotation:
    class_id: int
    box: Box

    @property
    def area(self) -> float:
        x1, y1, x2, y2 = self.box
        return (x2 - x1) * (y2 - y1)


@dataclass(frozen=True)
class AnnotationSet:
    """Anotaciones de una imagen con su dominio de origen"""
    domain: Domain
    boxes: np.ndarray
    class_ids: np.ndarray

    @classmethod
    def from_annotations(cls, domain: Domain, annotations: Sequence[Annotation]) -> "AnnotationSet":
        boxes = np.array([a.box for a in annotations], dtype=np.float64).reshape(-1, 4)
        class_ids = np.array([a.class_id for a in annotations], dtype=np.int64)
        return cls(domain=domain, boxes=boxes, class_ids=class_ids)

    def __len__(self) -> int:
        return int(self.class_ids.shape[0])


@dataclass
class SceneSample:
    image: np.ndarray
    domain: Domain
    split: str = "train"
    index: int = 0
    _annotations: Tuple[Annotation, ...] = field(default=(), repr=False)

    @property
    def annotations_hidden(self) -> bool:
        """Las anotaciones del objetivo no están disponibles para entrenamiento"""
        return self.domain is Domain.TARGET

    def training_annotations(self) -> AnnotationSet:
        """
        Accesor del lado de entrenamiento

        Raises:
            HiddenAnnotationError: si la muestra pertenece al dominio objetivo
        """
        if self.annotations_hidden:
            annotation_audit.record_target_read()
            raise HiddenAnnotationError(
                f"Lectura de anotaciones ocultas ({self.domain.value}/{self.split} #{self.index})"
            )
        return AnnotationSet.from_annotations(self.domain, self._annotations)

    def evaluation_annotations(self) -> Tuple[Annotation, ...]:
        """Accesor del lado de evaluación y diagnóstico"""
        return self._annotations

    @property
    def num_objects(self) -> int:
        return len(self._annotations)

    def checksum(self) -> str:
        digest = hashlib.sha256(np.ascontiguousarray(self.image).tobytes())
        for ann in self._annotations:
            digest.update(repr((ann.class_id, ann.box)).encode())
        return digest.hexdigest()


def _draw_shape(draw: ImageDraw.ImageDraw, shape: str, x0: int, y0: int, w: int, h: int) -> None:
    x1, y1 = x0 + w - 1, y0 + h - 1
    if shape == "circle":
        draw.ellipse([x0, y0, x1, y1], fill=255)
    elif shape in ("square", "bar"):
        draw.rectangle([x0, y0, x1, y1], fill=255)
    elif shape == "ring":
        width = max(1, int(round(min(w, h) / 5)))
        draw.ellipse([x0, y0, x1, y1], outline=255, width=width)
    elif shape == "cross":
        tw, th = max(1, w // 3), max(1, h // 3)
        cx0, cy0 = x0 + (w - tw) // 2, y0 + (h - th) // 2
        draw.rectangle([cx0, y0, cx0 + tw - 1, y1], fill=255)
        draw.rectangle([x0, cy0, x1, cy0 + th - 1], fill=255)
    else:
        draw.polygon(_polygon_points(shape, x0, y0, w, h), fill=255)


def _polygon_points(shape: str, x0: int, y0: int, w: int, h: int) -> List[Tuple[float, float]]:
    if shape == "triangle":
        unit = [(0.5, 0.0), (1.0, 1.0), (0.0, 1.0)]
    elif shape == "diamond":
        unit = [(0.5, 0.0), (1.0, 0.5), (0.5, 1.0), (0.0, 0.5)]
    else:
        angles = -np.pi / 2 + np.arange(10) * np.pi / 5
        radius = np.where(np.arange(10) % 2 == 0, 1.0, 0.45)
        xs, ys = radius * np.cos(angles), radius * np.sin(angles)
        # Reescalar la estrella para que llene su caja
        xs = (xs - xs.min()) / (xs.max() - xs.min())
        ys = (ys - ys.min()) / (ys.max() - ys.min())
        unit = list(zip(xs, ys))
    return [(x0 + ux * (w - 1), y0 + uy * (h - 1)) for ux, uy in unit]


def shape_mask(shape: str, width: int, height: int, image_size: int, x0: int, y0: int) -> np.ndarray:
    canvas = Image.new("L", (image_size, image_size), 0)
    _draw_shape(ImageDraw.Draw(canvas), shape, x0, y0, width, height)
    return np.asarray(canvas) > 0


def tight_box(mask: np.ndarray) -> Optional[Box]:
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return None
    return (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def _box_iou(a: Box, b: Box) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def _paint(canvas: np.ndarray, mask: np.ndarray, color: Sequence[float], fill_mode: FillMode) -> None:
    color = np.asarray(color, dtype=np.float64)
    if fill_mode is FillMode.SOLID:
        canvas[mask] = color
        return
    if fill_mode is FillMode.OUTLINED:
        interior = mask.copy()
        interior[1:, :] &= mask[:-1, :]
        interior[:-1, :] &= mask[1:, :]
        interior[:, 1:] &= mask[:, :-1]
        interior[:, :-1] &= mask[:, 1:]
        edge = mask & ~interior
        canvas[interior] = 0.35 * color + 0.65 * canvas[interior]
        canvas[edge] = color
        return
    ys, xs = np.nonzero(mask)
    stripes = 0.6 + 0.4 * (((xs + ys) // 2) % 2)
    canvas[ys, xs] = color[None, :] * stripes[:, None]


def render_scene(
    objects: Sequence[ObjectSpec],
    style: DomainStyle,
    rng: np.random.Generator,
    image_size: int = 64,
    max_overlap_iou: float = 0.2,
    split: str = "train",
    index: int = 0,
) -> SceneSample:
    """
    Renderizar una escena

    Cada objeto se ubica al azar rechazando posiciones cuyo IoU con una caja
    ya colocada supere ``max_overlap_iou``; tras 10 intentos fallidos la
    escena se descarta con RenderError. Las anotaciones son la caja ajustada
    a los píxeles de la máscara de cada forma.
    """
    if len(objects) > 6:
        raise ConfigurationError(f"Una escena admite 0 a 6 objetos, se pidieron {len(objects)}")

    canvas = np.empty((image_size, image_size, 3), dtype=np.float64)
    canvas[:] = np.asarray(style.background, dtype=np.float64)
    annotations: List[Annotation] = []

    for obj in objects:
        if obj.width > image_size or obj.height > image_size or obj.width < 1 or obj.height < 1:
            raise RenderError(
                f"Objeto {obj.width}x{obj.height} no cabe en una imagen de {image_size}px"
            )
        placed = None
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            x0 = int(rng.integers(0, image_size - obj.width + 1))
            y0 = int(rng.integers(0, image_size - obj.height + 1))
            candidate = (float(x0), float(y0), float(x0 + obj.width), float(y0 + obj.height))
            if all(_box_iou(candidate, ann.box) <= max_overlap_iou for ann in annotations):
                placed = (x0, y0)
                break
        if placed is None:
            raise RenderError(f"Sin posición libre para la clase {obj.class_id} tras {MAX_PLACEMENT_ATTEMPTS} intentos")

        mask = shape_mask(shape_of(obj.class_id), obj.width, obj.height, image_size, *placed)
        box = tight_box(mask)
        if box is None or (box[2] - box[0]) * (box[3] - box[1]) < MIN_BOX_AREA:
            raise RenderError(f"La forma de la clase {obj.class_id} quedó por debajo de {MIN_BOX_AREA} px²")
        _paint(canvas, mask, color_of(obj.class_id), style.fill_mode)
        annotations.append(Annotation(class_id=obj.class_id, box=box))

    if style.noise > 0:
        canvas += rng.normal(0.0, style.noise, size=canvas.shape)
    canvas += style.brightness
    if style.haze > 0:
        canvas = (1.0 - style.haze) * canvas + style.haze * FOG_COLOR
    np.clip(canvas, 0.0, 1.0, out=canvas)

    return SceneSample(
        image=canvas,
        domain=style.domain,
        split=split,
        index=index,
        _annotations=tuple(annotations),
    )


def to_pil(sample: SceneSample, draw_boxes: bool = True) -> Image.Image:
    """Imagen PIL de la muestra, con las cajas dibujadas para inspección"""
    image = Image.fromarray(np.round(sample.image * 255).astype(np.uint8))
    if draw_boxes:
        draw = ImageDraw.Draw(image)
        for ann in sample.evaluation_annotations():
            x1, y1, x2, y2 = ann.box
            draw.rectangle([x1, y1, x2 - 1, y2 - 1], outline=(255, 255, 255))
            draw.text((x1 + 1, y1), str(ann.class_id), fill=(255, 255, 255))
    return image
