from pathlib import Path
from functools import lru_cache

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Proyecto
    PROJECT_NAME: str = "UniDet-Lab"

    # Salidas (única variable de entorno del proyecto)
    UNIDET_OUTPUT_ROOT: Path = Path("runs")

    # Presets de escenarios
    PRESETS_DIR: Path = Path(__file__).resolve().parent.parent / "config" / "presets"

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"


@lru_cache()
def get_settings() -> Settings:
    return Settings()
