import sys
from pathlib import Path

from loguru import logger

# Configurar formato de logs
log_format = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
    "<level>{message}</level>"
)

# Remover configuración por defecto
logger.remove()

# Agregar sink a stdout
_stdout_handler = logger.add(
    sys.stdout,
    format=log_format,
    level="INFO",
    colorize=True,
)


def configure_logging(level: str = "INFO") -> None:
    """Reconfigurar el nivel del sink de stdout"""
    global _stdout_handler
    logger.remove(_stdout_handler)
    _stdout_handler = logger.add(
        sys.stdout,
        format=log_format,
        level=level.upper(),
        colorize=True,
    )


def add_run_sink(run_dir: Path, run_id: str) -> int:
    """
    Agregar un sink a archivo exclusivo de una corrida

    Solo recibe los mensajes emitidos con ``logger.bind(run_id=run_id)``,
    así dos corridas concurrentes no mezclan sus logs.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    return logger.add(
        run_dir / "train.log",
        format=log_format,
        level="DEBUG",
        colorize=False,
        filter=lambda record: record["extra"].get("run_id") == run_id,
    )


def remove_run_sink(handler_id: int) -> None:
    logger.remove(handler_id)


def get_logger():
    return logger
