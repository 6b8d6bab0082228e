import enum


class Domain(str, enum.Enum):
    SOURCE = "source"
    TARGET = "target"

    @property
    def label(self) -> int:
        """Etiqueta de dominio: 0 fuente, 1 objetivo"""
        return 0 if self is Domain.SOURCE else 1


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


class Scenario(str, enum.Enum):
    CLOSED_SET = "closed_set"
    PARTIAL_SET = "partial_set"
    OPEN_SET = "open_set"
    OPEN_SUBSET = "open_subset"


class ScaleBucket(str, enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"

    @property
    def rank(self) -> int:
        return _BUCKET_RANK[self]

    @property
    def entry(self) -> int:
        """Posición de la escala en el vector multi-etiqueta (1..3)"""
        return _BUCKET_RANK[self] + 1


_BUCKET_RANK = {ScaleBucket.SMALL: 0, ScaleBucket.MEDIUM: 1, ScaleBucket.LARGE: 2}

BUCKETS = (ScaleBucket.SMALL, ScaleBucket.MEDIUM, ScaleBucket.LARGE)


class FillMode(str, enum.Enum):
    SOLID = "solid"
    OUTLINED = "outlined"
    TEXTURED = "textured"


class Method(str, enum.Enum):
    SOURCE_ONLY = "SourceOnly"
    DAF = "DAF"
    USDAF = "USDAF"
    USDAF_NO_FM = "USDAF_noFM"
    USDAF_NO_SAA = "USDAF_noSAA"
