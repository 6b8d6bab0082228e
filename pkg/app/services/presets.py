from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import yaml
from pydantic import ValidationError

from app.config import get_settings
from app.core.exceptions import ConfigurationError
from app.logger import get_logger
from app.schemas.experiment import ExperimentConfig

logger = get_logger()


def presets_dir() -> Path:
    return Path(get_settings().PRESETS_DIR)


def list_presets() -> List[str]:
    return sorted(p.stem for p in presets_dir().glob("*.json"))


def load_config_file(path: Path) -> Dict[str, Any]:
    """Leer un archivo de configuración JSON (sintaxis compatible con YAML)"""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Archivo de configuración no encontrado: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        logger.error(f"Error leyendo configuración {path}: {e}")
        raise ConfigurationError(f"Configuración ilegible en {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} debe contener un objeto")
    return data


def load_preset_data(name: str) -> Dict[str, Any]:
    path = presets_dir() / f"{name}.json"
    if not path.exists():
        raise ConfigurationError(f"Preset '{name}' no encontrado. Disponibles: {list_presets()}")
    return load_config_file(path)


def parse_override_args(args: Sequence[str]) -> Dict[str, str]:
    """Convertir ``--clave=valor`` en un diccionario"""
    overrides: Dict[str, str] = {}
    for arg in args:
        if not arg.startswith("--") or "=" not in arg:
            raise ConfigurationError(f"Override inválido '{arg}', se espera --clave=valor")
        key, value = arg[2:].split("=", 1)
        overrides[key.replace("-", "_")] = value
    return overrides


def apply_overrides(data: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Aplicar overrides con claves punteadas (``manifest.label_space.xi``)

    Los valores en texto se interpretan con yaml.safe_load, así que números,
    booleanos y listas (``[1,2,3]``) llegan con su tipo.
    """
    result = dict(data)
    for key, raw in overrides.items():
        value = yaml.safe_load(raw) if isinstance(raw, str) else raw
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            child = dict(child) if isinstance(child, dict) else {}
            node[part] = child
            node = child
        node[parts[-1]] = value
    return result


def build_config(
    preset: Optional[str] = None,
    config_path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """
    Construir un ExperimentConfig desde preset, archivo y overrides (en ese orden)

    Raises:
        ConfigurationError: si la configuración resultante no es válida
    """
    data: Dict[str, Any] = {}
    if preset:
        data = load_preset_data(preset)
    if config_path:
        data = _merge(data, load_config_file(config_path))
    data = apply_overrides(data, overrides or {})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        logger.error(f"Configuración inválida: {e}")
        raise ConfigurationError(f"Configuración inválida: {e}") from e


def _merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged
