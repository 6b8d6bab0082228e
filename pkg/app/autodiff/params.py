"""
Almacén de parámetros con inicialización uniforme escalada por fan-in
"""
from collections import OrderedDict
from typing import Dict, Iterator, Mapping, Sequence, Tuple

import numpy as np

from app.autodiff.tensor import Tensor
from app.core.exceptions import ShapeMismatchError


class ParameterStore:
    """Parámetros con nombre, en orden de creación"""

    def __init__(self, prefix: str = ""):
        self.prefix = prefix
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def _full_name(self, name: str) -> str:
        return f"{self.prefix}{name}"

    def uniform(
        self, name: str, shape: Sequence[int], fan_in: int, rng: np.random.Generator
    ) -> Tensor:
        """U(-1/sqrt(fan_in), +1/sqrt(fan_in))"""
        bound = 1.0 / np.sqrt(fan_in)
        values = rng.uniform(-bound, bound, size=tuple(shape))
        return self._add(name, values)

    def zeros(self, name: str, shape: Sequence[int]) -> Tensor:
        return self._add(name, np.zeros(tuple(shape)))

    def _add(self, name: str, values: np.ndarray) -> Tensor:
        full = self._full_name(name)
        if full in self._params:
            raise ValueError(f"Parámetro duplicado: {full}")
        tensor = Tensor(values, requires_grad=True, name=full)
        self._params[full] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[self._full_name(name)]

    def __iter__(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def named(self) -> Dict[str, Tensor]:
        return dict(self._params)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, tensor in self._params.items():
            if name not in arrays:
                raise KeyError(f"Falta el parámetro '{name}' en el checkpoint")
            values = np.asarray(arrays[name], dtype=np.float64)
            if values.shape != tensor.shape:
                raise ShapeMismatchError(
                    f"Parámetro '{name}': forma {values.shape}, se esperaba {tensor.shape}"
                )
            tensor.values = values.copy()
