from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from app.core.exceptions import ConfigurationError
from app.detector.boxes import clip_boxes


@lru_cache(maxsize=16)
def _grid_boxes(image_size: int, stride: int, sides: Tuple[float, ...]) -> np.ndarray:
    size = image_size // stride
    centers = (np.arange(size) + 0.5) * stride
    cy, cx = np.meshgrid(centers, centers, indexing="ij")
    boxes = []
    for side in sides:
        half = side / 2.0
        boxes.append(np.stack([cx - half, cy - half, cx + half, cy + half], axis=-1).reshape(-1, 4))
    out = clip_boxes(np.concatenate(boxes, axis=0), image_size)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AnchorGrid:
    """
    Anclas cuadradas centradas en cada celda del mapa de features

    El orden plano es (ancla, fila, columna), el mismo que produce la salida
    (1, A, H, W) de la cabeza de objectness al aplanarse.
    """
    image_size: int = 64
    stride: int = 8
    sides: Tuple[float, ...] = (6.0, 16.0, 40.0)

    def __post_init__(self):
        if self.image_size % self.stride:
            raise ConfigurationError(
                f"image_size={self.image_size} no es múltiplo del stride {self.stride}"
            )

    @property
    def feature_size(self) -> int:
        return self.image_size // self.stride

    @property
    def num_anchors(self) -> int:
        return len(self.sides)

    def __len__(self) -> int:
        return self.num_anchors * self.feature_size ** 2

    def boxes(self) -> np.ndarray:
        """Anclas recortadas a la imagen, forma (A·H·W, 4)"""
        return _grid_boxes(self.image_size, self.stride, tuple(float(s) for s in self.sides))
