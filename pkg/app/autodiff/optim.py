"""
Optimizador SGD con momentum y weight decay
"""
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from app.autodiff.tensor import Tensor, check_finite
from app.core.exceptions import ConfigurationError, ShapeMismatchError, TapeError


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate debe ser > 0, se recibió {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum debe estar en [0, 1), se recibió {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay debe ser >= 0, se recibió {self.weight_decay}")


def sgd_step(params: Mapping[str, Tensor], state: OptimizerState) -> None:
    """
    Un paso de SGD:
        v <- momentum·v + grad + weight_decay·param
        param <- param - lr·v
    Después del paso los gradientes quedan limpios.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise TapeError(f"Parámetros sin gradiente: {missing[:5]}")

    for name, param in params.items():
        velocity = state.velocity.get(name)
        if velocity is None:
            velocity = np.zeros_like(param.values)
        elif velocity.shape != param.shape:
            raise ShapeMismatchError(
                f"Velocidad de '{name}' con forma {velocity.shape}, parámetro {param.shape}"
            )
        velocity = state.momentum * velocity + param.grad + state.weight_decay * param.values
        updated = param.values - state.learning_rate * velocity
        check_finite(updated, f"sgd_step[{name}]")
        state.velocity[name] = velocity
        param.values = updated
        param.grad = None


class SGD:
    """Envoltorio con estado sobre sgd_step"""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        learning_rate: float,
        momentum: float = 0.9,
        weight_decay: float = 0.0005,
    ):
        self.params = dict(params)
        self.state = OptimizerState(learning_rate, momentum, weight_decay)

    @property
    def learning_rate(self) -> float:
        return self.state.learning_rate

    def set_learning_rate(self, learning_rate: float) -> None:
        if learning_rate <= 0:
            raise ConfigurationError(f"learning_rate debe ser > 0, se recibió {learning_rate}")
        self.state.learning_rate = learning_rate

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = np.zeros_like(param.values)

    def step(self) -> None:
        sgd_step(self.params, self.state)
