# Solo se reexportan los módulos sin dependencias del detector
from app.usdaf.scale import normalize_area, scale_bucket, bucket_of_box
from app.usdaf.multilabel import FilterConfig, MultiLabelVector, encode_multilabel, filter_keep, multilabel_da_loss

__all__ = [
    "normalize_area",
    "scale_bucket",
    "bucket_of_box",
    "FilterConfig",
    "MultiLabelVector",
    "encode_multilabel",
    "filter_keep",
    "multilabel_da_loss",
]
