"""
Entrenamiento y evaluación de una corrida (config, semilla)
"""
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from app.autodiff.optim import SGD
from app.autodiff.tensor import Tape, Tensor, backward
from app.config import get_settings
from app.core.exceptions import ConfigurationError, NonFiniteError, TrainingDivergedError
from app.detector.checkpoint import load_checkpoint, save_checkpoint
from app.detector.losses import DetectionLoss, detection_loss
from app.detector.model import MiniDetector
from app.evalkit.export import export_instance_features
from app.evalkit.metrics import evaluate_detections
from app.evalkit.reports import write_report
from app.logger import add_run_sink, get_logger, remove_run_sink
from app.scenegen.audit import annotation_audit
from app.scenegen.dataset import GeneratedDataset, generate_dataset
from app.scenegen.render import SceneSample
from app.schemas.common import Domain, Method
from app.schemas.experiment import ExperimentConfig, LossSample, RunRecord
from app.schemas.metrics import MetricsReport, RunMetadata
from app.usdaf.alignment import AdaptationPlan, UniDALosses, adaptation_losses, total_objective
from app.usdaf.diagnostics import discriminator_group_means
from app.usdaf.discriminators import DiscriminatorHeads
from app.workers.batching import PairedBatcher
from app.workers.methods import adaptation_plan

logger = get_logger()

CHECKPOINT_NAME = "checkpoint.bin"


@dataclass
class StepLosses:
    detection: DetectionLoss
    unida: Optional[UniDALosses]
    total: Tensor

    def sample(self, step: int, learning_rate: float) -> LossSample:
        unida = self.unida
        return LossSample(
            step=step,
            learning_rate=learning_rate,
            total=self.total.item(),
            detection=self.detection.total.item(),
            unida=unida.total.item() if unida else 0.0,
            image_kept=unida.image.kept if unida else 0,
            image_total=unida.image.total if unida else 0,
            instance_kept=unida.instance.kept if unida else 0,
            instance_total=unida.instance.total if unida else 0,
        )


def method_label(config: ExperimentConfig) -> str:
    return config.method.value


def run_dir_for(config: ExperimentConfig, seed: int, label: Optional[str] = None) -> Path:
    """``<raíz>/<nombre>/<preset>/<método>/seed_<k>``"""
    root = Path(config.output_dir or get_settings().UNIDET_OUTPUT_ROOT)
    return root / config.name / (config.preset or "custom") / (label or method_label(config)) / f"seed_{seed}"


def build_models(
    config: ExperimentConfig, source_classes, seed: int
) -> Tuple[MiniDetector, Optional[DiscriminatorHeads], Optional[AdaptationPlan]]:
    """Detector, discriminadores (si el método adapta) y plan de adaptación"""
    plan = adaptation_plan(config.method, config.eta, config.m)
    detector = MiniDetector(source_classes, config.detector, seed=seed)
    heads = None
    if plan is not None:
        heads = DiscriminatorHeads(
            detector.channels,
            detector.roi_dim,
            entries=plan.entries,
            seed=seed,
            image_hidden=config.discriminator.image_hidden,
            instance_hidden=config.discriminator.instance_hidden,
        )
    return detector, heads, plan


def grl_coefficient(config: ExperimentConfig, step: int) -> float:
    """η constante, o rampa η·(2/(1+exp(-10p)) - 1) con p = paso/total"""
    if not config.grl_ramp:
        return config.eta
    progress = step / config.total_steps
    return config.eta * (2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0)


def compute_step_losses(
    config: ExperimentConfig,
    detector: MiniDetector,
    heads: Optional[DiscriminatorHeads],
    plan: Optional[AdaptationPlan],
    source: SceneSample,
    target: SceneSample,
    coefficient: float,
) -> StepLosses:
    """
    Objetivo de un paso: L_DET sobre la fuente y, si hay plan, L_UniDA del par

    El objetivo solo aporta su imagen; sus anotaciones nunca se consultan.
    """
    annotations = source.training_annotations()
    source_output = detector.forward(source.image, extra_rois=annotations.boxes)
    det = detection_loss(source_output, annotations, detector)
    if plan is None:
        return StepLosses(detection=det, unida=None, total=det.total)

    target_output = detector.forward(target.image)
    unida = adaptation_losses(
        source_output,
        target_output,
        annotations,
        heads,
        plan,
        coefficient,
        stride=config.detector.feature_stride,
        image_size=config.manifest.image_size,
        reference_side_px=config.manifest.reference_side_px,
        image_label_min_score=config.image_label_min_score,
    )
    return StepLosses(detection=det, unida=unida, total=total_objective(det.total, unida.total))


def _dump_last_batch(run_dir: Path, step: int, source: SceneSample, target: SceneSample, error: Exception) -> Path:
    path = run_dir / "nan_dump.npz"
    np.savez(path, source_image=source.image, target_image=target.image)
    (run_dir / "nan_dump.json").write_text(
        json.dumps(
            {
                "step": step,
                "error": str(error),
                "source": {"split": source.split, "index": source.index},
                "target": {"split": target.split, "index": target.index},
            },
            indent=2,
        )
    )
    return path


def _checkpoint_arrays(detector: MiniDetector, heads: Optional[DiscriminatorHeads]) -> dict:
    arrays = detector.state_arrays()
    if heads is not None:
        arrays.update(heads.state_arrays())
    return arrays


def run_metadata(config: ExperimentConfig, seed: int) -> RunMetadata:
    return RunMetadata(
        name=config.name,
        preset=config.preset,
        method=config.method,
        seed=seed,
        config_hash=config.config_hash(),
    )


def evaluate_model(
    config: ExperimentConfig,
    dataset: GeneratedDataset,
    detector: MiniDetector,
    heads: Optional[DiscriminatorHeads],
    seed: int,
) -> MetricsReport:
    """Evaluar sobre target_test (clases comunes) y, si hay discriminadores, medir d0 por grupo"""
    stream = dataset.target_test
    detections = [detector.detect(sample.image) for sample in stream]
    ground_truth = [sample.evaluation_annotations() for sample in stream]
    report = evaluate_detections(
        detections,
        ground_truth,
        dataset.label_space,
        image_size=config.manifest.image_size,
        reference_side_px=config.manifest.reference_side_px,
    )
    update = {"metadata": run_metadata(config, seed)}
    if heads is not None:
        update["group_means"] = discriminator_group_means(
            detector, heads, dataset.source_test, dataset.target_test, dataset.label_space
        )
    return report.model_copy(update=update)


def train(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    run_dir: Optional[Path] = None,
    dataset: Optional[GeneratedDataset] = None,
    label: Optional[str] = None,
) -> RunRecord:
    """
    Ejecutar ``total_steps`` pasos de SGD sobre el objetivo del método

    Persiste config.json, train.log, loss_curve.csv, checkpoint.bin,
    metrics.json/md y run_record.json en el directorio de la corrida.

    Raises:
        TrainingDivergedError: si aparece un valor no finito (tras volcar el último lote)
    """
    seed = config.seeds[0] if seed is None else seed
    run_dir = Path(run_dir or run_dir_for(config, seed, label))
    run_dir.mkdir(parents=True, exist_ok=True)
    config_hash = config.config_hash()
    run_id = f"{config_hash[:12]}-{seed}-{run_dir}"
    sink = add_run_sink(run_dir, run_id)
    log = logger.bind(run_id=run_id)
    (run_dir / "config.json").write_text(config.model_dump_json(indent=2))

    started = time.perf_counter()
    reads_before = annotation_audit.target_reads
    try:
        dataset = dataset or generate_dataset(config.manifest)
        detector, heads, plan = build_models(config, dataset.label_space.source_classes, seed)
        params = detector.named_parameters()
        if heads is not None:
            params.update(heads.named_parameters())
        optimizer = SGD(params, config.learning_rate, config.momentum, config.weight_decay)
        batches = PairedBatcher(dataset.source_train, dataset.target_train, seed=seed)

        log.info(
            f"Inicio {config.name}/{config.preset or 'custom'}/{label or method_label(config)} "
            f"seed={seed}: {config.total_steps} pasos, {len(params)} parámetros, hash={config_hash[:12]}"
        )
        curve: List[LossSample] = []
        for step in range(config.total_steps):
            learning_rate = config.learning_rate_at(step)
            if learning_rate != optimizer.learning_rate:
                log.info(f"Paso {step}: learning rate {optimizer.learning_rate:g} -> {learning_rate:g}")
                optimizer.set_learning_rate(learning_rate)
            source, target = next(batches)
            optimizer.zero_grad()
            try:
                with Tape():
                    losses = compute_step_losses(
                        config, detector, heads, plan, source, target, grl_coefficient(config, step)
                    )
                    backward(losses.total)
                optimizer.step()
            except NonFiniteError as e:
                dump = _dump_last_batch(run_dir, step, source, target, e)
                log.error(f"Paso {step}: valores no finitos ({e}); lote volcado en {dump}")
                raise TrainingDivergedError(f"Entrenamiento divergió en el paso {step}: {e}") from e

            sample = losses.sample(step, learning_rate)
            curve.append(sample)
            if step % config.log_every == 0 or step == config.total_steps - 1:
                log.info(
                    f"Paso {step}: lr={learning_rate:g} total={sample.total:.4f} "
                    f"det={sample.detection:.4f} unida={sample.unida:.4f} "
                    f"img {sample.image_kept}/{sample.image_total} ins {sample.instance_kept}/{sample.instance_total}"
                )

        pd.DataFrame([s.model_dump() for s in curve]).to_csv(run_dir / "loss_curve.csv", index=False)
        checkpoint = save_checkpoint(
            run_dir / CHECKPOINT_NAME,
            _checkpoint_arrays(detector, heads),
            {
                "method": config.method.value,
                "entries": plan.entries if plan else None,
                "config_hash": config_hash,
                "seed": seed,
                "source_classes": list(detector.classes),
            },
        )

        metrics = evaluate_model(config, dataset, detector, heads, seed)
        write_report(metrics, run_dir)
        reads = annotation_audit.target_reads - reads_before
        if reads:
            log.error(f"Se registraron {reads} lecturas de anotaciones del objetivo durante el entrenamiento")
        record = RunRecord(
            config_hash=config_hash,
            config=config,
            seed=seed,
            run_dir=run_dir,
            checkpoint_path=checkpoint,
            loss_curve=curve,
            metrics=metrics,
            wall_time_s=time.perf_counter() - started,
            target_annotation_reads=reads,
        )
        (run_dir / "run_record.json").write_text(record.model_dump_json(indent=2))
        log.info(f"Fin seed={seed}: mAP={metrics.mean_ap:.4f} en {record.wall_time_s:.1f}s")
        return record
    except Exception as e:
        log.error(f"Corrida fallida en {run_dir}: {e}")
        raise
    finally:
        remove_run_sink(sink)


def load_trained_models(
    checkpoint_path: Path,
    config: Optional[ExperimentConfig] = None,
    dataset: Optional[GeneratedDataset] = None,
) -> Tuple[ExperimentConfig, GeneratedDataset, MiniDetector, Optional[DiscriminatorHeads], int]:
    """Reconstruir detector y discriminadores desde checkpoint (config.json al lado si no se pasa)"""
    checkpoint_path = Path(checkpoint_path)
    arrays, metadata = load_checkpoint(checkpoint_path)
    if config is None:
        config_file = checkpoint_path.parent / "config.json"
        if not config_file.exists():
            raise ConfigurationError(f"No se encontró {config_file}; indicar la configuración explícitamente")
        config = ExperimentConfig.model_validate_json(config_file.read_text())
    if metadata.get("method") and Method(metadata["method"]) is not config.method:
        raise ConfigurationError(
            f"El checkpoint es de {metadata['method']} y la configuración pide {config.method.value}"
        )
    seed = int(metadata.get("seed", config.seeds[0]))
    dataset = dataset or generate_dataset(config.manifest)
    detector, heads, _ = build_models(config, dataset.label_space.source_classes, seed)
    detector.load_arrays(arrays)
    if heads is not None:
        heads.load_arrays(arrays)
    return config, dataset, detector, heads, seed


def evaluate_checkpoint(
    checkpoint_path: Path,
    config: Optional[ExperimentConfig] = None,
    dataset: Optional[GeneratedDataset] = None,
) -> MetricsReport:
    config, dataset, detector, heads, seed = load_trained_models(checkpoint_path, config, dataset)
    return evaluate_model(config, dataset, detector, heads, seed)


def export_features(
    checkpoint_path: Path,
    output_path: Path,
    config: Optional[ExperimentConfig] = None,
    domains: Tuple[Domain, ...] = (Domain.SOURCE, Domain.TARGET),
) -> Path:
    """CSV de features de instancia de los splits de test de cada dominio"""
    config, dataset, detector, _, _ = load_trained_models(checkpoint_path, config)
    samples = [sample for domain in domains for sample in dataset.stream(domain, "test")]
    return export_instance_features(
        detector, samples, dataset.label_space, output_path, config.manifest.reference_side_px
    )
