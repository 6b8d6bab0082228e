"""
Operaciones diferenciables sobre Tensor

Todas siguen el mismo contrato: calculan la salida con numpy, validan que
sea finita y, si hay una cinta activa, registran su función backward.
No hay broadcasting arbitrario: los sesgos tienen operaciones propias.
"""
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.autodiff.tensor import Tensor, active_tape, record_op
from app.core.exceptions import ConfigurationError, ShapeMismatchError, TapeError

Scalar = Union[int, float]


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: formas incompatibles {a.shape} y {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return record_op("add", (a, b), a.values + b.values, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return record_op("sub", (a, b), a.values - b.values, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    av, bv = a.values, b.values
    return record_op("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(x: Tensor, factor: Scalar) -> Tensor:
    factor = float(factor)
    return record_op("scale", (x,), x.values * factor, lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: formas incompatibles {a.shape} y {b.shape}")
    av, bv = a.values, b.values
    return record_op("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Sumar un sesgo (K,) a cada fila de x (N, K)"""
    if x.ndim != 2 or bias.shape != (x.shape[1],):
        raise ShapeMismatchError(f"add_bias: formas incompatibles {x.shape} y {bias.shape}")
    return record_op(
        "add_bias", (x, bias), x.values + bias.values, lambda g: (g, g.sum(axis=0))
    )


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Sumar un sesgo por canal a un tensor NCHW"""
    if x.ndim != 4 or bias.shape != (x.shape[1],):
        raise ShapeMismatchError(
            f"add_channel_bias: formas incompatibles {x.shape} y {bias.shape}"
        )
    out = x.values + bias.values[None, :, None, None]
    return record_op("add_channel_bias", (x, bias), out, lambda g: (g, g.sum(axis=(0, 2, 3))))


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return record_op("relu", (x,), np.where(mask, x.values, 0.0), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return record_op("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        out = x.values.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeMismatchError(f"reshape: {original} -> {tuple(shape)}: {e}") from e
    return record_op("reshape", (x,), out, lambda g: (g.reshape(original),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record_op(
        "transpose", (x,), x.values.transpose(axes), lambda g: (g.transpose(inverse),)
    )


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return record_op(
        "sum", (x,), np.asarray(x.values.sum()), lambda g: (np.full(shape, float(g)),)
    )


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, max(1, x.size)
    return record_op(
        "mean", (x,), np.asarray(x.values.mean() if x.size else 0.0),
        lambda g: (np.full(shape, float(g) / n),),
    )


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Seleccionar filas (eje 0) por índice entero"""
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def backward_fn(g):
        gx = np.zeros(shape)
        np.add.at(gx, index, g)
        return (gx,)

    return record_op("take_rows", (x,), x.values[index], backward_fn)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenar tensores sobre el eje 0"""
    if not tensors:
        raise ShapeMismatchError("concat_rows requiere al menos un tensor")
    tail = tensors[0].shape[1:]
    for t in tensors:
        if t.shape[1:] != tail:
            raise ShapeMismatchError(f"concat_rows: formas incompatibles {t.shape} y {tail}")
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]
    out = np.concatenate([t.values for t in tensors], axis=0)
    return record_op(
        "concat_rows", tuple(tensors), out, lambda g: tuple(np.split(g, splits, axis=0))
    )


def gather_cells(fmap: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """
    Muestreo por vecino más cercano de un mapa (1, C, H, W)

    ``rows`` y ``cols`` tienen forma (R, P, P); la salida es (R, C, P, P).
    """
    if fmap.ndim != 4 or fmap.shape[0] != 1:
        raise ShapeMismatchError(f"gather_cells espera (1, C, H, W), se recibió {fmap.shape}")
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape != cols.shape or rows.ndim != 3:
        raise ShapeMismatchError("gather_cells: índices con formas distintas")
    feature = fmap.values[0]
    out = feature[:, rows, cols].transpose(1, 0, 2, 3)

    def backward_fn(g):
        gf = np.zeros_like(feature)
        np.add.at(gf, (slice(None), rows, cols), g.transpose(1, 0, 2, 3))
        return (gf[None],)

    return record_op("gather_cells", (fmap,), out, backward_fn)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Correlación cruzada 2D sobre NCHW con kernel (O, C, kh, kw)"""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatchError(f"conv2d espera tensores 4D, se recibió {x.shape} y {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"conv2d: stride={stride} padding={padding} inválidos")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeMismatchError(f"conv2d: {c} canales de entrada, el kernel espera {kc}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatchError(f"conv2d: salida vacía para entrada {x.shape} y kernel {kernel.shape}")

    p, s = padding, stride
    xp = np.pad(x.values, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :oh, :ow]
    kv = kernel.values
    out = np.einsum("ncijab,ocab->noij", windows, kv, optimize=True)

    def backward_fn(g):
        gk = np.einsum("ncijab,noij->ocab", windows, g, optimize=True)
        gxp = np.zeros_like(xp)
        for a in range(kh):
            for b in range(kw):
                gxp[:, :, a:a + s * oh:s, b:b + s * ow:s] += np.einsum(
                    "noij,oc->ncij", g, kv[:, :, a, b], optimize=True
                )
        return gxp[:, :, p:p + h, p:p + w], gk

    return record_op("conv2d", (x, kernel), out, backward_fn)


def max_pool2d(x: Tensor, size: int = 2, stride: Optional[int] = None) -> Tensor:
    stride = stride or size
    if x.ndim != 4:
        raise ShapeMismatchError(f"max_pool2d espera NCHW, se recibió {x.shape}")
    n, c, h, w = x.shape
    oh = (h - size) // stride + 1
    ow = (w - size) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatchError(f"max_pool2d: ventana {size} mayor que la entrada {x.shape}")
    windows = sliding_window_view(x.values, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    windows = windows[:, :, :oh, :ow].reshape(n, c, oh, ow, size * size)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    nn_, cc, ii, jj = np.indices((n, c, oh, ow))
    rows = ii * stride + arg // size
    cols = jj * stride + arg % size

    def backward_fn(g):
        gx = np.zeros(x.shape)
        np.add.at(gx, (nn_, cc, rows, cols), g)
        return (gx,)

    return record_op("max_pool2d", (x,), out, backward_fn)


def grad_reverse(x: Tensor, coefficient: float) -> Tensor:
    """
    Capa de inversión de gradiente

    Identidad hacia adelante; hacia atrás multiplica el gradiente por
    ``-coefficient``.
    """
    if not np.isfinite(coefficient) or coefficient <= 0:
        raise ConfigurationError(f"grad_reverse requiere coeficiente > 0, se recibió {coefficient}")
    if active_tape() is None:
        raise TapeError("grad_reverse requiere una cinta activa")
    factor = -float(coefficient)
    return record_op("grad_reverse", (x,), x.values.copy(), lambda g: (g * factor,))


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.values.copy(), requires_grad=False)


def adversarial_bridge(x: Tensor, coefficient: float) -> Tensor:
    """grad_reverse si el coeficiente es positivo; corte de gradiente si es cero"""
    if coefficient == 0:
        return stop_gradient(x)
    return grad_reverse(x, coefficient)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return add_bias(matmul(x, weight), bias)


def conv_block(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return add_channel_bias(conv2d(x, kernel, stride=stride, padding=padding), bias)


def to_tensor(x: Union[Tensor, np.ndarray, Sequence[float], float]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def values_of(x) -> np.ndarray:
    return x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
