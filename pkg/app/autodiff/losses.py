"""
Pérdidas fusionadas: entropía cruzada binaria, SmoothL1 y softmax
"""
from typing import Optional, Union

import numpy as np

from app.autodiff.ops import values_of
from app.autodiff.tensor import Tensor, record_op
from app.core.exceptions import ShapeMismatchError

ArrayLike = Union[Tensor, np.ndarray]

# Recorte de probabilidades antes del logaritmo
PROB_EPS = 1e-7


def _weights(weight: Optional[ArrayLike], shape, op: str) -> Optional[np.ndarray]:
    if weight is None:
        return None
    w = values_of(weight)
    if w.shape != shape:
        raise ShapeMismatchError(f"{op}: pesos con forma {w.shape}, se esperaba {shape}")
    return w


def binary_cross_entropy(
    pred: Tensor,
    label: ArrayLike,
    weight: Optional[ArrayLike] = None,
    eps: float = PROB_EPS,
) -> Tensor:
    """
    Entropía cruzada binaria sumada: -Σ w·[d·log(p) + (1-d)·log(1-p)]

    Args:
        pred: probabilidades predichas
        label: etiquetas en {0,1} o [0,1] (constante)
        weight: máscara o pesos por elemento (constante)
    """
    p = pred.values
    d = values_of(label)
    if d.shape != p.shape:
        raise ShapeMismatchError(f"binary_cross_entropy: formas {p.shape} y {d.shape}")
    w = _weights(weight, p.shape, "binary_cross_entropy")

    pc = np.clip(p, eps, 1.0 - eps)
    elem = -(d * np.log(pc) + (1.0 - d) * np.log(1.0 - pc))
    if w is not None:
        elem = elem * w
    inside = (p >= eps) & (p <= 1.0 - eps)

    def backward_fn(g):
        dp = -(d / pc - (1.0 - d) / (1.0 - pc)) * inside
        if w is not None:
            dp = dp * w
        return (dp * float(g),)

    return record_op("binary_cross_entropy", (pred,), np.asarray(elem.sum()), backward_fn)


def smooth_l1(pred: Tensor, target: ArrayLike, weight: Optional[ArrayLike] = None) -> Tensor:
    """SmoothL1 sumado: 0.5·x² si |x| < 1, si no |x| - 0.5"""
    t = values_of(target)
    if t.shape != pred.shape:
        raise ShapeMismatchError(f"smooth_l1: formas {pred.shape} y {t.shape}")
    w = _weights(weight, pred.shape, "smooth_l1")

    x = pred.values - t
    ax = np.abs(x)
    quadratic = ax < 1.0
    elem = np.where(quadratic, 0.5 * x * x, ax - 0.5)
    slope = np.where(quadratic, x, np.sign(x))
    if w is not None:
        elem = elem * w
        slope = slope * w

    inputs = (pred, target) if isinstance(target, Tensor) else (pred,)

    def backward_fn(g):
        gp = slope * float(g)
        return (gp, -gp) if len(inputs) == 2 else (gp,)

    return record_op("smooth_l1", inputs, np.asarray(elem.sum()), backward_fn)


def softmax_cross_entropy(
    logits: Tensor,
    labels: np.ndarray,
    weight: Optional[np.ndarray] = None,
) -> Tensor:
    """Entropía cruzada softmax sumada sobre filas de logits (N, K)"""
    if logits.ndim != 2:
        raise ShapeMismatchError(f"softmax_cross_entropy espera (N, K), se recibió {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatchError(f"softmax_cross_entropy: {n} filas y {labels.shape} etiquetas")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ShapeMismatchError(f"softmax_cross_entropy: etiqueta fuera de rango [0, {k})")
    w = _weights(weight, (n,), "softmax_cross_entropy")

    z = logits.values - logits.values.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_prob = z - log_norm
    rows = np.arange(n)
    elem = -log_prob[rows, labels]
    if w is not None:
        elem = elem * w

    def backward_fn(g):
        grad = np.exp(log_prob)
        grad[rows, labels] -= 1.0
        if w is not None:
            grad = grad * w[:, None]
        return (grad * float(g),)

    return record_op("softmax_cross_entropy", (logits,), np.asarray(elem.sum()), backward_fn)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
