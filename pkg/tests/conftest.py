import numpy as np
import pytest

from app.autodiff.tensor import Tape, Tensor, backward
from app.schemas.experiment import DetectorSettings, ExperimentConfig
from app.schemas.manifest import DatasetManifest, LabelSpaceRequest, SplitCounts


def numeric_gradient(fn, values: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Diferencias finitas centrales de una función escalar de un arreglo"""
    values = np.array(values, dtype=np.float64)
    grad = np.zeros_like(values)
    flat = values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn(values.copy())
        flat[i] = original - h
        minus = fn(values.copy())
        flat[i] = original
        out[i] = (plus - minus) / (2 * h)
    return grad


def analytic_gradient(fn, values: np.ndarray) -> np.ndarray:
    """Gradiente por la cinta de ``fn(Tensor) -> Tensor escalar``"""
    x = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
    with Tape():
        loss = fn(x)
        backward(loss)
    return x.grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)) + np.max(np.abs(b))))


def check_gradient(fn, values: np.ndarray, tol: float = 1e-4) -> float:
    def scalar(v):
        return fn(Tensor(v)).item()

    error = relative_error(analytic_gradient(fn, values), numeric_gradient(scalar, values))
    assert error < tol, f"error relativo {error}"
    return error


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_manifest() -> DatasetManifest:
    return DatasetManifest(
        seed=5,
        image_size=32,
        max_objects=3,
        reference_side_px=100,
        scale_mixtures={
            "source": {"small": 0.5, "medium": 0.5, "large": 0.0},
            "target": {"small": 0.5, "medium": 0.5, "large": 0.0},
        },
        label_space=LabelSpaceRequest(universe_size=8, scenario="open_set", xi=0.5, seed=0),
        counts=SplitCounts(source_train=6, target_train=6, target_test=4, source_test=4),
    )


@pytest.fixture
def tiny_config(tiny_manifest, tmp_path) -> ExperimentConfig:
    return ExperimentConfig(
        name="tiny",
        manifest=tiny_manifest,
        total_steps=4,
        lr_drop_step=2,
        seeds=[1],
        log_every=1,
        output_dir=tmp_path / "runs",
        detector=DetectorSettings(image_size=32, channels=[4, 8], anchor_sides=[6.0, 16.0], top_k=8, roi_hidden=8),
        discriminator={"image_hidden": 4, "instance_hidden": 8},
    )
