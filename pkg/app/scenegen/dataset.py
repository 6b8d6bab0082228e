"""
Generación determinista de datasets fuente/objetivo a partir de un manifiesto
"""
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.exceptions import ConfigurationError, RenderError
from app.logger import get_logger
from app.scenegen.label_spaces import LabelSpaceConfig, build_label_spaces
from app.scenegen.render import (
    BAR_ASPECT,
    ObjectSpec,
    SceneSample,
    render_scene,
    shape_of,
    to_pil,
)
from app.schemas.common import BUCKETS, Domain, ScaleBucket
from app.schemas.manifest import DatasetManifest, SplitSummary
from app.usdaf.scale import bucket_of_box, raw_thresholds

logger = get_logger()

SPLITS: Tuple[Tuple[Domain, str], ...] = (
    (Domain.SOURCE, "train"),
    (Domain.TARGET, "train"),
    (Domain.TARGET, "test"),
    (Domain.SOURCE, "test"),
)
_SPLIT_CODES = {"train": 0, "test": 1}

MAX_SCENE_ATTEMPTS = 10
MAX_EXTENT_FRACTION = 0.7
# Formas cuyo rasterizado coincide exactamente con la caja pedida
_EXACT_SHAPES = ("square", "bar", "cross")


def extent_ranges(
    shape: str, image_size: int, reference_side_px: float
) -> Dict[ScaleBucket, Optional[Tuple[int, int]]]:
    """
    Rango de extensión entera por cubeta para una forma

    Para "bar" la extensión es el alto (ancho = 2·alto); para el resto es el
    lado. Los rangos garantizan que la caja renderizada caiga en la cubeta
    pedida aun si el rasterizado pierde un píxel por lado.
    """
    small_max, large_min = raw_thresholds(image_size, reference_side_px)
    if shape == "bar":
        limit = min(int(image_size * 0.97) // BAR_ASPECT, image_size // BAR_ASPECT)

        def low(e):
            return BAR_ASPECT * e * e

        high = low
    else:
        limit = int(image_size * MAX_EXTENT_FRACTION)
        shrink = 0 if shape in _EXACT_SHAPES else 1

        def low(e):
            return (e - shrink) ** 2

        def high(e):
            return e * e

    rules = {
        ScaleBucket.SMALL: lambda e: low(e) >= 16 and high(e) < small_max,
        ScaleBucket.MEDIUM: lambda e: low(e) >= small_max and high(e) <= large_min,
        ScaleBucket.LARGE: lambda e: low(e) > large_min,
    }
    ranges: Dict[ScaleBucket, Optional[Tuple[int, int]]] = {}
    for bucket, rule in rules.items():
        valid = [e for e in range(1, limit + 1) if rule(e)]
        ranges[bucket] = (valid[0], valid[-1]) if valid else None
    return ranges


def _object_size(shape: str, extent: int) -> Tuple[int, int]:
    if shape == "bar":
        return BAR_ASPECT * extent, extent
    return extent, extent


class ScenePlanner:
    """Planifica la lista de objetos de una escena para un dominio"""

    def __init__(self, manifest: DatasetManifest, domain: Domain, classes: Sequence[int]):
        self.manifest = manifest
        self.domain = domain
        self.classes = tuple(sorted(classes))
        self.probabilities = np.asarray(manifest.mixture_for(domain).probabilities())
        self.ranges = {
            shape: extent_ranges(shape, manifest.image_size, manifest.reference_side_px)
            for shape in {shape_of(c) for c in self.classes}
        }
        for shape, ranges in self.ranges.items():
            for bucket, prob in zip(BUCKETS, self.probabilities):
                if prob > 0 and ranges[bucket] is None:
                    raise ConfigurationError(
                        f"La cubeta {bucket.value} es inalcanzable para '{shape}' con imagen de "
                        f"{manifest.image_size}px y reference_side_px={manifest.reference_side_px}"
                    )

    def plan(self, rng: np.random.Generator) -> List[ObjectSpec]:
        """
        Sortear entre 1 y max_objects objetos

        Se deja de sortear cuando el área nominal cubierta alcanza el
        presupuesto de cobertura.
        """
        if self.manifest.max_objects == 0:
            return []
        budget = self.manifest.coverage_budget * self.manifest.image_size ** 2
        count = int(rng.integers(1, self.manifest.max_objects + 1))
        objects: List[ObjectSpec] = []
        covered = 0.0
        for _ in range(count):
            if covered >= budget:
                break
            class_id = self.classes[int(rng.integers(0, len(self.classes)))]
            bucket = BUCKETS[int(rng.choice(len(BUCKETS), p=self.probabilities))]
            shape = shape_of(class_id)
            lo, hi = self.ranges[shape][bucket]
            width, height = _object_size(shape, int(rng.integers(lo, hi + 1)))
            objects.append(ObjectSpec(class_id=class_id, width=width, height=height))
            covered += width * height
        return objects

    def expected_mean_area(self) -> float:
        """Área nominal media de un objeto bajo la distribución del planificador"""
        per_class = []
        for class_id in self.classes:
            shape = shape_of(class_id)
            mean = 0.0
            for bucket, prob in zip(BUCKETS, self.probabilities):
                if prob == 0:
                    continue
                lo, hi = self.ranges[shape][bucket]
                areas = [np.prod(_object_size(shape, e)) for e in range(lo, hi + 1)]
                mean += prob * float(np.mean(areas))
            per_class.append(mean)
        return float(np.mean(per_class))


class SceneStream(Sequence):
    """
    Secuencia perezosa de escenas de un (dominio, split)

    Cada índice se renderiza de forma pura a partir de (seed, dominio, split,
    índice), por lo que el acceso es determinista y paralelizable.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        planner: ScenePlanner,
        domain: Domain,
        split: str,
        count: int,
    ):
        self.manifest = manifest
        self.planner = planner
        self.domain = domain
        self.split = split
        self.count = count
        self.style = manifest.styles[domain]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(self.count))]
        if index < 0:
            index += self.count
        if not 0 <= index < self.count:
            raise IndexError(f"Índice {index} fuera de rango para {self.name}")
        return self.render(index)

    def __iter__(self) -> Iterator[SceneSample]:
        for index in range(self.count):
            yield self.render(index)

    @property
    def name(self) -> str:
        return f"{self.domain.value}_{self.split}"

    def render(self, index: int) -> SceneSample:
        last_error: Optional[RenderError] = None
        for attempt in range(MAX_SCENE_ATTEMPTS):
            rng = np.random.default_rng(
                [self.manifest.seed, self.domain.label, _SPLIT_CODES[self.split], index, attempt]
            )
            objects = self.planner.plan(rng)
            try:
                return render_scene(
                    objects,
                    self.style,
                    rng,
                    image_size=self.manifest.image_size,
                    max_overlap_iou=self.manifest.max_overlap_iou,
                    split=self.split,
                    index=index,
                )
            except RenderError as e:
                last_error = e
                logger.debug(f"{self.name} #{index}: reintento {attempt + 1} ({e})")
        logger.error(f"{self.name} #{index}: escena descartada tras {MAX_SCENE_ATTEMPTS} intentos")
        raise RenderError(f"No se pudo renderizar {self.name} #{index}: {last_error}")

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for sample in self:
            digest.update(sample.checksum().encode())
        return digest.hexdigest()


@dataclass
class GeneratedDataset:
    manifest: DatasetManifest
    label_space: LabelSpaceConfig
    streams: Dict[Tuple[Domain, str], SceneStream]

    def stream(self, domain: Domain, split: str) -> SceneStream:
        return self.streams[(Domain(domain), split)]

    @property
    def source_train(self) -> SceneStream:
        return self.stream(Domain.SOURCE, "train")

    @property
    def target_train(self) -> SceneStream:
        return self.stream(Domain.TARGET, "train")

    @property
    def target_test(self) -> SceneStream:
        return self.stream(Domain.TARGET, "test")

    @property
    def source_test(self) -> SceneStream:
        return self.stream(Domain.SOURCE, "test")

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for key in SPLITS:
            digest.update(self.streams[key].checksum().encode())
        return digest.hexdigest()


def generate_dataset(manifest: DatasetManifest) -> GeneratedDataset:
    """Construir el espacio de etiquetas y las cuatro secuencias de escenas"""
    request = manifest.label_space
    label_space = build_label_spaces(
        request.universe_size, request.scenario, request.xi, seed=request.seed
    )
    planners = {
        domain: ScenePlanner(manifest, domain, label_space.classes_for(domain))
        for domain in Domain
    }
    streams = {
        (domain, split): SceneStream(
            manifest, planners[domain], domain, split, manifest.count_for(domain, split)
        )
        for domain, split in SPLITS
    }
    logger.info(
        f"Dataset: {label_space.scenario.value} ξ={label_space.xi:.3f}, "
        f"{', '.join(f'{s.name}={len(s)}' for s in streams.values())}"
    )
    return GeneratedDataset(manifest=manifest, label_space=label_space, streams=streams)


def objects_frame(stream: SceneStream) -> pd.DataFrame:
    """Una fila por objeto renderizado (lado de evaluación)"""
    manifest = stream.manifest
    rows = []
    for sample in stream:
        for ann in sample.evaluation_annotations():
            rows.append(
                {
                    "index": sample.index,
                    "class_id": ann.class_id,
                    "area": ann.area,
                    "bucket": bucket_of_box(
                        ann.box, manifest.image_size, manifest.reference_side_px
                    ).value,
                }
            )
    return pd.DataFrame(rows, columns=["index", "class_id", "area", "bucket"])


def summarize_stream(stream: SceneStream) -> SplitSummary:
    frame = objects_frame(stream)
    fractions = {}
    if len(frame):
        fractions = frame["bucket"].value_counts(normalize=True).to_dict()
    return SplitSummary(
        domain=stream.domain,
        split=stream.split,
        images=len(stream),
        objects=len(frame),
        mean_area=float(frame["area"].mean()) if len(frame) else None,
        bucket_fractions={b.value: float(fractions.get(b.value, 0.0)) for b in BUCKETS},
        class_counts={int(k): int(v) for k, v in frame["class_id"].value_counts().sort_index().items()},
        checksum=stream.checksum(),
    )


def dataset_statistics(dataset: GeneratedDataset) -> List[SplitSummary]:
    return [summarize_stream(dataset.streams[key]) for key in SPLITS]


def dump_images(dataset: GeneratedDataset, output_dir: Path, count: int) -> List[Path]:
    """Guardar las primeras ``count`` escenas de cada split como PNG"""
    output_dir = Path(output_dir)
    written = []
    for key in SPLITS:
        stream = dataset.streams[key]
        split_dir = output_dir / stream.name
        split_dir.mkdir(parents=True, exist_ok=True)
        for index in range(min(count, len(stream))):
            path = split_dir / f"{index:05d}.png"
            to_pil(stream[index]).save(path)
            written.append(path)
    logger.info(f"{len(written)} imágenes escritas en {output_dir}")
    return written
