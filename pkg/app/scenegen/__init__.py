from app.scenegen.label_spaces import LabelSpaceConfig, build_label_spaces
from app.scenegen.render import Annotation, AnnotationSet, ObjectSpec, SceneSample, render_scene
from app.scenegen.dataset import GeneratedDataset, SceneStream, generate_dataset
from app.scenegen.audit import annotation_audit

__all__ = [
    "LabelSpaceConfig",
    "build_label_spaces",
    "Annotation",
    "AnnotationSet",
    "ObjectSpec",
    "SceneSample",
    "render_scene",
    "GeneratedDataset",
    "SceneStream",
    "generate_dataset",
    "annotation_audit",
]
