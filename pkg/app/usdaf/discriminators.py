from typing import Dict, Mapping

import numpy as np

from app.autodiff import ops
from app.autodiff.params import ParameterStore
from app.autodiff.tensor import Tensor
from app.core.exceptions import ConfigurationError, ShapeMismatchError


class DiscriminatorHeads:
    """
    Discriminadores de imagen y de instancia

    - imagen: conv 1x1 C->hidden, ReLU, conv 1x1 hidden->K, sigmoide; una fila
      por ubicación (u, v) en orden fila-columna.
    - instancia: perceptrón D->hidden->K con sigmoide.
    K = 4 (dominio + escala) o 1 (solo dominio).
    """

    def __init__(
        self,
        channels: int,
        roi_dim: int,
        entries: int = 4,
        seed: int = 0,
        image_hidden: int = 32,
        instance_hidden: int = 64,
    ):
        if entries not in (1, 4):
            raise ConfigurationError(f"Los discriminadores admiten 1 o 4 salidas, se pidió {entries}")
        self.channels = channels
        self.roi_dim = roi_dim
        self.entries = entries
        self.params = ParameterStore("disc.")
        rng = np.random.default_rng([seed, 2])
        p = self.params
        p.uniform("img.w1", (image_hidden, channels, 1, 1), channels, rng)
        p.zeros("img.b1", (image_hidden,))
        p.uniform("img.w2", (entries, image_hidden, 1, 1), image_hidden, rng)
        p.zeros("img.b2", (entries,))
        p.uniform("ins.w1", (roi_dim, instance_hidden), roi_dim, rng)
        p.zeros("ins.b1", (instance_hidden,))
        p.uniform("ins.w2", (instance_hidden, entries), instance_hidden, rng)
        p.zeros("ins.b2", (entries,))

    def image_forward(self, features: Tensor) -> Tensor:
        """(1, C, H, W) -> (H·W, K)"""
        if features.ndim != 4 or features.shape[:2] != (1, self.channels):
            raise ShapeMismatchError(
                f"El discriminador de imagen espera (1, {self.channels}, H, W), se recibió {features.shape}"
            )
        p = self.params
        _, _, h, w = features.shape
        hidden = ops.relu(ops.conv_block(features, p["img.w1"], p["img.b1"]))
        logits = ops.conv_block(hidden, p["img.w2"], p["img.b2"])
        flat = ops.reshape(ops.transpose(logits, (0, 2, 3, 1)), (h * w, self.entries))
        return ops.sigmoid(flat)

    def instance_forward(self, roi_features: Tensor) -> Tensor:
        """(R, D) -> (R, K)"""
        if roi_features.ndim != 2 or roi_features.shape[1] != self.roi_dim:
            raise ShapeMismatchError(
                f"El discriminador de instancia espera (R, {self.roi_dim}), se recibió {roi_features.shape}"
            )
        p = self.params
        hidden = ops.relu(ops.linear(roi_features, p["ins.w1"], p["ins.b1"]))
        return ops.sigmoid(ops.linear(hidden, p["ins.w2"], p["ins.b2"]))

    def named_parameters(self) -> Dict[str, Tensor]:
        return self.params.named()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return self.params.state_arrays()

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        self.params.load_arrays(arrays)
