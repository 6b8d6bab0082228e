"""
Espacios de etiquetas fuente/objetivo con índice de Jaccard controlado
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.core.exceptions import ConfigurationError
from app.logger import get_logger
from app.schemas.common import Domain, Scenario

logger = get_logger()

XI_TOLERANCE = 1e-9


@dataclass(frozen=True)
class LabelSpaceConfig:
    universe: Tuple[int, ...]
    source_classes: Tuple[int, ...]
    target_classes: Tuple[int, ...]
    scenario: Scenario

    def __post_init__(self):
        if not self.source_classes or not self.target_classes:
            raise ConfigurationError("Los conjuntos de clases no pueden estar vacíos")
        universe = set(self.universe)
        if not set(self.source_classes) <= universe or not set(self.target_classes) <= universe:
            raise ConfigurationError("Las clases deben pertenecer al universo")

    @property
    def common(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.source_classes) & set(self.target_classes)))

    @property
    def source_private(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.source_classes) - set(self.target_classes)))

    @property
    def target_private(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.target_classes) - set(self.source_classes)))

    @property
    def xi(self) -> float:
        union = set(self.source_classes) | set(self.target_classes)
        return len(self.common) / len(union)

    def classes_for(self, domain: Domain) -> Tuple[int, ...]:
        return self.source_classes if domain is Domain.SOURCE else self.target_classes

    def is_common(self, class_id: int) -> bool:
        return class_id in set(self.common)

    def summary(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "xi": self.xi,
            "common": list(self.common),
            "source_private": list(self.source_private),
            "target_private": list(self.target_private),
        }


def _split_private(private: int) -> Tuple[int, int]:
    return private // 2, private - private // 2


def candidate_splits(universe_size: int, scenario: Scenario) -> List[Tuple[int, int, int]]:
    """
    Particiones (comunes, privadas fuente, privadas objetivo) válidas para el
    escenario, ordenadas de mayor a menor unión
    """
    splits = []
    for union in range(universe_size, 1, -1):
        if scenario is Scenario.CLOSED_SET:
            splits.append((union, 0, 0))
            continue
        for common in range(union - 1, 0, -1):
            private = union - common
            if scenario is Scenario.PARTIAL_SET:
                splits.append((common, private, 0))
            elif scenario is Scenario.OPEN_SUBSET:
                splits.append((common, 0, private))
            elif private >= 2:
                src, tgt = _split_private(private)
                splits.append((common, src, tgt))
    return splits


def achievable_xis(universe_size: int, scenario: Scenario) -> List[float]:
    values = {
        round(common / (common + src + tgt), 6)
        for common, src, tgt in candidate_splits(universe_size, scenario)
    }
    return sorted(values)


def build_label_spaces(
    universe_size: int,
    scenario: Scenario,
    target_xi: float,
    seed: int = 0,
) -> LabelSpaceConfig:
    """
    Construir C_s y C_t para el escenario pedido con ξ exacto

    Se elige la partición de mayor unión cuyo ξ coincide con ``target_xi``;
    las identidades de clase salen de una permutación con semilla.

    Raises:
        ConfigurationError: si el universo es demasiado chico o ξ no es alcanzable
    """
    scenario = Scenario(scenario)
    if universe_size < 4:
        raise ConfigurationError(f"universe_size debe ser >= 4, se recibió {universe_size}")

    chosen = None
    for common, src, tgt in candidate_splits(universe_size, scenario):
        if abs(common / (common + src + tgt) - target_xi) < XI_TOLERANCE:
            chosen = (common, src, tgt)
            break

    if chosen is None:
        achievable = achievable_xis(universe_size, scenario)
        logger.error(f"ξ={target_xi} no alcanzable para {scenario.value} con universo {universe_size}")
        raise ConfigurationError(
            f"ξ={target_xi} no es alcanzable para {scenario.value} con universo de "
            f"{universe_size} clases. Valores alcanzables: {achievable}"
        )

    common, src, tgt = chosen
    perm = [int(c) for c in np.random.default_rng(seed).permutation(universe_size)]
    common_ids = perm[:common]
    src_ids = perm[common:common + src]
    tgt_ids = perm[common + src:common + src + tgt]

    config = LabelSpaceConfig(
        universe=tuple(range(universe_size)),
        source_classes=tuple(sorted(common_ids + src_ids)),
        target_classes=tuple(sorted(common_ids + tgt_ids)),
        scenario=scenario,
    )
    logger.debug(
        f"Espacio de etiquetas {scenario.value}: |C|={common}, |C̄s|={src}, |C̄t|={tgt}, ξ={config.xi:.4f}"
    )
    return config
