"""
Checkpoint binario de parámetros con cabecera de texto

Formato (ver DOCS/CHECKPOINT_FORMAT.md):

    UNIDET-CHECKPOINT 1\\n
    meta <json en una línea>\\n
    <nombre> <forma> <offset> <nbytes>\\n     (una línea por arreglo)
    END\\n
    <datos float64 little-endian concatenados>
"""
import json
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from app.core.exceptions import ConfigurationError
from app.logger import get_logger

logger = get_logger()

MAGIC = "UNIDET-CHECKPOINT 1"
_DTYPE = np.dtype("<f8")


def _format_shape(shape: Tuple[int, ...]) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(text: str) -> Tuple[int, ...]:
    return () if text == "scalar" else tuple(int(d) for d in text.split("x"))


def save_checkpoint(
    path: Path,
    arrays: Mapping[str, np.ndarray],
    metadata: Optional[dict] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [MAGIC, "meta " + json.dumps(metadata or {}, sort_keys=True)]
    blobs = []
    offset = 0
    for name, values in arrays.items():
        if not name or any(ch.isspace() for ch in name):
            raise ConfigurationError(f"Nombre de parámetro inválido para checkpoint: {name!r}")
        blob = np.ascontiguousarray(values, dtype=_DTYPE).tobytes()
        lines.append(f"{name} {_format_shape(np.shape(values))} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    lines.append("END")

    try:
        with open(path, "wb") as f:
            f.write(("\n".join(lines) + "\n").encode("utf-8"))
            for blob in blobs:
                f.write(blob)
    except OSError as e:
        logger.error(f"Error escribiendo checkpoint {path}: {e}")
        raise
    logger.debug(f"Checkpoint guardado: {path} ({len(blobs)} arreglos, {offset} bytes)")
    return path


def load_checkpoint(path: Path) -> Tuple[Dict[str, np.ndarray], dict]:
    """Leer un checkpoint; devuelve (arreglos por nombre, metadatos)"""
    raw = Path(path).read_bytes()
    marker = b"\nEND\n"
    end = raw.find(marker)
    if end < 0:
        raise ConfigurationError(f"{path}: falta el marcador END de la cabecera")
    header = raw[:end].decode("utf-8").split("\n")
    data = raw[end + len(marker):]
    if not header or header[0] != MAGIC:
        raise ConfigurationError(f"{path}: no es un checkpoint válido")

    metadata: dict = {}
    arrays: Dict[str, np.ndarray] = {}
    for line in header[1:]:
        if line.startswith("meta "):
            metadata = json.loads(line[len("meta "):])
            continue
        name, shape_text, offset_text, size_text = line.split(" ")
        offset, size = int(offset_text), int(size_text)
        if offset + size > len(data):
            raise ConfigurationError(f"{path}: datos truncados para '{name}'")
        values = np.frombuffer(data[offset:offset + size], dtype=_DTYPE)
        arrays[name] = values.reshape(_parse_shape(shape_text)).astype(np.float64)
    return arrays, metadata
