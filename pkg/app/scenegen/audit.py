"""
Contador de lecturas de anotaciones del dominio objetivo desde entrenamiento
"""
import threading

from app.logger import get_logger

logger = get_logger()


class AnnotationAudit:
    """Contador thread-safe; cualquier valor distinto de cero es una fuga de etiquetas"""

    def __init__(self):
        self._lock = threading.Lock()
        self._target_reads = 0

    def record_target_read(self) -> None:
        with self._lock:
            self._target_reads += 1
        logger.warning("Intento de lectura de anotaciones del dominio objetivo desde entrenamiento")

    @property
    def target_reads(self) -> int:
        with self._lock:
            return self._target_reads

    def reset(self) -> None:
        with self._lock:
            self._target_reads = 0


# Instancia global
annotation_audit = AnnotationAudit()
