"""
Tensor y cinta de cómputo para autodiferenciación en modo reverso
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import NonFiniteError, ShapeMismatchError, TapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# Cinta activa del contexto actual (un hilo o tarea por corrida)
_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "active_tape", default=None
)


class Tensor:
    """Arreglo denso float64 con gradiente opcional"""

    __slots__ = ("values", "requires_grad", "grad", "name", "node_id", "tape")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.node_id: Optional[int] = None
        self.tape: Optional[Tape] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


@dataclass
class TapeNode:
    node_id: int
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward_fn: BackwardFn


class Tape:
    """
    Registro ordenado de operaciones ejecutadas

    Los nodos se agregan en orden de ejecución, por lo que cada nodo
    aparece después de los nodos que producen sus entradas.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(
        self,
        op: str,
        inputs: Tuple[Tensor, ...],
        output: Tensor,
        backward_fn: BackwardFn,
    ) -> TapeNode:
        node = TapeNode(len(self.nodes), op, inputs, output, backward_fn)
        self.nodes.append(node)
        output.node_id = node.node_id
        output.tape = self
        return node


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def check_finite(values: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"La operación '{op}' produjo valores no finitos")


def record_op(
    op: str,
    inputs: Sequence[Tensor],
    out_values: np.ndarray,
    backward_fn: BackwardFn,
) -> Tensor:
    """Crear el tensor de salida de una operación y registrarla en la cinta activa"""
    check_finite(out_values, op)
    tape = _ACTIVE_TAPE.get()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_values, requires_grad=track)
    if track:
        tape.record(op, tuple(inputs), out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """
    Propagar gradientes desde una pérdida escalar

    Cada nodo alcanzable se visita una sola vez, en orden topológico
    inverso. Los gradientes se acumulan en ``grad`` de los tensores hoja.
    """
    if loss.size != 1:
        raise TapeError(f"backward requiere un escalar, se recibió forma {loss.shape}")

    if loss.tape is None or loss.node_id is None:
        if loss.requires_grad:
            seed = np.ones_like(loss.values)
            loss.grad = seed if loss.grad is None else loss.grad + seed
            return
        raise TapeError("La pérdida no pertenece a una cinta activa")

    tape = loss.tape
    pending = {id(loss): np.ones_like(loss.values)}

    for node in reversed(tape.nodes[: loss.node_id + 1]):
        upstream = pending.pop(id(node.output), None)
        if upstream is None:
            continue

        input_grads = node.backward_fn(upstream)
        for tensor, grad in zip(node.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            if grad.shape != tensor.values.shape:
                raise ShapeMismatchError(
                    f"Gradiente de '{node.op}' con forma {grad.shape}, se esperaba {tensor.values.shape}"
                )
            if tensor.node_id is None or tensor.tape is not tape:
                # Hoja: acumular en el tensor
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            else:
                key = id(tensor)
                pending[key] = pending[key] + grad if key in pending else grad
