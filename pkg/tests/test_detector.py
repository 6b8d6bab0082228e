import math

import numpy as np
import pytest

from app.autodiff.tensor import Tape, Tensor, backward
from app.core.exceptions import ConfigurationError, HiddenAnnotationError, ShapeMismatchError
from app.detector.anchors import AnchorGrid
from app.detector.boxes import (
    BBOX_LOG_CLIP,
    box_encode,
    box_transform,
    decode_boxes,
    encode_boxes,
    iou,
    iou_matrix,
    nms,
)
from app.detector.checkpoint import load_checkpoint, save_checkpoint
from app.detector.losses import assign_roi_targets, detection_loss, match_anchors
from app.detector.model import MiniDetector
from app.scenegen.audit import annotation_audit
from app.scenegen.dataset import generate_dataset
from app.scenegen.render import AnnotationSet
from app.schemas.common import Domain
from app.schemas.experiment import DetectorSettings
from tests.conftest import relative_error

SMALL = DetectorSettings(image_size=32, channels=[4, 8], anchor_sides=[6.0, 16.0], top_k=8, roi_hidden=8)


@pytest.fixture
def detector():
    return MiniDetector([1, 3, 5], SMALL, seed=2)


def _random_boxes(rng, n, size=32.0):
    xy = rng.uniform(0, size * 0.7, size=(n, 2))
    wh = rng.uniform(2.0, size * 0.3, size=(n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def _brute_force_nms(boxes, scores, threshold):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    keep = []
    for i in order:
        if all(iou(boxes[i], boxes[j]) <= threshold for j in keep):
            keep.append(i)
    return keep


# Geometría de cajas
@pytest.mark.parametrize(
    "a,b,expected",
    [
        ((0, 0, 2, 2), (0, 0, 2, 2), 1.0),
        ((0, 0, 2, 2), (3, 3, 5, 5), 0.0),
        ((0, 0, 2, 2), (1, 0, 3, 2), 1.0 / 3.0),
        ((0, 0, 4, 4), (1, 1, 3, 3), 0.25),
    ],
)
def test_iou_examples(a, b, expected):
    """Test: IoU de pares conocidos"""
    assert iou(a, b) == pytest.approx(expected)


def test_iou_matrix_empty():
    """Test: IoU contra un conjunto vacío"""
    assert iou_matrix(np.zeros((0, 4)), np.ones((3, 4))).shape == (0, 3)


def test_encode_decode_inverse(rng):
    """Test: decodificar la codificación recupera la caja"""
    anchors = _random_boxes(rng, 30)
    gt = _random_boxes(rng, 30)
    np.testing.assert_allclose(decode_boxes(anchors, encode_boxes(anchors, gt)), gt, atol=1e-9)


def test_log_width_delta_doubles_width():
    """Test: tw = ln 2 duplica el ancho manteniendo el centro"""
    box = box_transform((0, 0, 10, 10), (0.0, 0.0, math.log(2.0), 0.0))
    np.testing.assert_allclose(box, [-5.0, 0.0, 15.0, 10.0])
    np.testing.assert_allclose(box_encode((0, 0, 10, 10), box), [0.0, 0.0, math.log(2.0), 0.0], atol=1e-12)


def test_log_delta_is_clipped():
    """Test: tw enorme se recorta a ln(1000/16)"""
    box = box_transform((0, 0, 16, 16), (0.0, 0.0, 50.0, 0.0))
    assert box[2] - box[0] == pytest.approx(16.0 * math.exp(BBOX_LOG_CLIP))


def test_degenerate_box_is_rejected():
    """Test: cajas de ancho cero"""
    with pytest.raises(ConfigurationError):
        box_encode((0, 0, 0, 5), (0, 0, 4, 4))


@pytest.mark.parametrize("trial", range(10))
def test_nms_matches_brute_force(trial):
    """Test: NMS contra una implementación voraz directa"""
    rng = np.random.default_rng(trial)
    boxes = _random_boxes(rng, 25)
    scores = np.round(rng.uniform(size=25), 1)  # con empates
    assert list(nms(boxes, scores, 0.5)) == _brute_force_nms(boxes, scores, 0.5)


def test_nms_threshold_is_strict():
    """Test: IoU igual al umbral no suprime"""
    boxes = np.array([[0, 0, 2, 2], [1, 0, 3, 2]], dtype=float)
    assert list(nms(boxes, [0.9, 0.8], 1.0 / 3.0)) == [0, 1]
    assert list(nms(boxes, [0.9, 0.8], 0.3)) == [0]


# Anclas
def test_anchor_grid_inside_image():
    """Test: todas las anclas quedan dentro de la imagen"""
    grid = AnchorGrid(image_size=64, stride=8, sides=(6.0, 16.0, 40.0))
    boxes = grid.boxes()
    assert boxes.shape == (3 * 8 * 8, 4) == (len(grid), 4)
    assert boxes.min() >= 0.0 and boxes.max() <= 64.0
    assert np.all(boxes[:, 2] > boxes[:, 0]) and np.all(boxes[:, 3] > boxes[:, 1])


def test_anchor_grid_requires_divisible_size():
    """Test: tamaño de imagen no múltiplo del stride"""
    with pytest.raises(ConfigurationError):
        AnchorGrid(image_size=30, stride=8)


def test_anchor_matching_invariant_under_transpose(rng):
    """Test: intercambiar ejes x/y no cambia la asignación de anclas"""
    anchors = AnchorGrid(image_size=32, stride=4, sides=(6.0, 16.0)).boxes()
    gt = _random_boxes(rng, 3)
    swap = [1, 0, 3, 2]
    plain = match_anchors(anchors, gt)
    swapped = match_anchors(anchors[:, swap], gt[:, swap])
    np.testing.assert_array_equal(plain.labels, swapped.labels)
    np.testing.assert_array_equal(plain.matched_gt, swapped.matched_gt)


def test_anchor_matching_every_gt_gets_a_positive(rng):
    """Test: cada GT tiene al menos un ancla positiva asignada"""
    anchors = AnchorGrid(image_size=32, stride=4, sides=(6.0, 16.0)).boxes()
    gt = _random_boxes(rng, 4)
    targets = match_anchors(anchors, gt)
    best_anchor = iou_matrix(anchors, gt).argmax(axis=0)
    assert np.all(targets.labels[best_anchor] == 1)


def test_anchor_matching_without_gt_is_all_negative():
    """Test: sin GT todas las anclas son negativas"""
    targets = match_anchors(np.array([[0, 0, 4, 4], [2, 2, 8, 8]], dtype=float), np.zeros((0, 4)))
    np.testing.assert_array_equal(targets.labels, [0, 0])


# Modelo
def test_backbone_shape_and_zero_image(detector):
    """Test: forma del mapa de features; imagen nula da features nulas"""
    features = detector.backbone_forward(np.zeros((32, 32, 3)))
    assert features.shape == (1, 8, 8, 8)
    assert np.all(features.values == 0.0)


def test_backbone_rejects_wrong_image(detector):
    """Test: imagen con otro tamaño"""
    with pytest.raises(ShapeMismatchError):
        detector.backbone_forward(np.zeros((64, 64, 3)))


def test_propose_respects_top_k_and_bounds(detector, rng):
    """Test: propuestas dentro de la imagen y a lo sumo top_k"""
    features = detector.backbone_forward(rng.uniform(size=(32, 32, 3)))
    assert detector.propose(features, top_k=0) == []
    proposals = detector.propose(features, top_k=5)
    assert 0 < len(proposals) <= 5
    for p in proposals:
        x1, y1, x2, y2 = p.box
        assert 0.0 <= x1 < x2 <= 32.0 and 0.0 <= y1 < y2 <= 32.0
        assert p.roi_feature.shape == (detector.roi_dim,)
    scores = [p.score for p in proposals]
    assert scores == sorted(scores, reverse=True)


def test_propose_ranks_the_firing_anchor_first(detector):
    """Test: con la cabeza de objectness fijada a mano, el ancla que dispara es la propuesta #1"""
    p = detector.params
    c, hw = detector.channels, detector.anchors.feature_size
    fired_anchor, row, col = 1, 2, 5
    p["rpn.conv.w"].values[...] = 0.0
    p["rpn.conv.w"].values[:, :, 1, 1] = np.eye(c)
    p["rpn.conv.b"].values[...] = 0.0
    p["rpn.obj.w"].values[...] = 0.0
    p["rpn.obj.w"].values[fired_anchor, :, 0, 0] = 8.0
    p["rpn.obj.b"].values[...] = -4.0
    p["rpn.delta.w"].values[...] = 0.0
    p["rpn.delta.b"].values[...] = 0.0

    features = np.zeros((1, c, hw, hw))
    features[0, :, row, col] = 1.0
    proposals = detector.propose(Tensor(features), top_k=4)

    index = fired_anchor * hw * hw + row * hw + col
    # Ancla de lado 16 centrada en la celda (2, 5) con stride 4
    assert proposals[0].box == pytest.approx((14.0, 2.0, 30.0, 18.0))
    assert proposals[0].box == pytest.approx(tuple(detector.anchors.boxes()[index]))
    assert proposals[0].score == pytest.approx(1.0 / (1.0 + math.exp(-(8.0 * c - 4.0))))
    assert all(q.score == pytest.approx(1.0 / (1.0 + math.exp(4.0))) for q in proposals[1:])


def test_detect_only_reports_source_classes(detector, rng):
    """Test: las detecciones usan clases de la fuente y están ordenadas"""
    detections = detector.detect(rng.uniform(size=(32, 32, 3)))
    assert all(d.class_id in (1, 3, 5) for d in detections)
    confidences = [d.confidence for d in detections]
    assert confidences == sorted(confidences, reverse=True)
    assert len(detections) <= SMALL.max_detections


def test_detector_requires_classes():
    """Test: detector sin clases"""
    with pytest.raises(ConfigurationError):
        MiniDetector([], SMALL)


# Pérdida de detección
def test_detection_loss_without_objects(detector, rng):
    """Test: sin GT los términos de regresión son cero"""
    annotations = AnnotationSet.from_annotations(Domain.SOURCE, [])
    out = detector.forward(rng.uniform(size=(32, 32, 3)))
    loss = detection_loss(out, annotations, detector)
    assert loss.rpn_box.item() == 0.0
    assert loss.roi_box.item() == 0.0
    assert loss.rpn_objectness.item() > 0.0


def test_detection_loss_rejects_target_annotations(detector, rng):
    """Test: anotaciones del objetivo en la pérdida supervisada"""
    annotations = AnnotationSet(Domain.TARGET, np.zeros((0, 4)), np.zeros(0, dtype=np.int64))
    out = detector.forward(rng.uniform(size=(32, 32, 3)))
    before = annotation_audit.target_reads
    with pytest.raises(HiddenAnnotationError):
        detection_loss(out, annotations, detector)
    assert annotation_audit.target_reads == before + 1


def test_detection_loss_terms_match_oracle(tiny_manifest):
    """Test: objectness y CE de ROIs contra un cálculo directo"""
    dataset = generate_dataset(tiny_manifest)
    detector = MiniDetector(dataset.label_space.source_classes, SMALL, seed=0)
    sample = dataset.source_train[0]
    annotations = sample.training_annotations()
    out = detector.forward(sample.image, extra_rois=annotations.boxes)
    loss = detection_loss(out, annotations, detector)

    targets = match_anchors(detector.anchors.boxes(), annotations.boxes, SMALL.positive_iou, SMALL.negative_iou)
    p = np.clip(out.rpn.objectness.values, 1e-7, 1 - 1e-7)
    expected = 0.0
    for prob, label in zip(p, targets.labels):
        if label == 1:
            expected -= math.log(prob)
        elif label == 0:
            expected -= math.log(1 - prob)
    expected /= max(1, int((targets.labels >= 0).sum()))
    assert loss.rpn_objectness.item() == pytest.approx(expected, rel=1e-9)

    gt_labels = np.array([detector.label_of[int(c)] for c in annotations.class_ids])
    roi = assign_roi_targets(out.rois, annotations.boxes, gt_labels)
    logits = out.cls_logits.values
    ce = 0.0
    for row, label in zip(logits, roi.labels):
        ce += math.log(np.exp(row - row.max()).sum()) + row.max() - row[label]
    assert loss.roi_cls.item() == pytest.approx(ce / len(out.rois), rel=1e-9)

    # Las cajas GT agregadas como ROI siempre son positivas
    assert roi.positive[-len(annotations):].all()
    parts = loss.as_floats()
    assert parts["total"] == pytest.approx(
        parts["rpn_objectness"] + parts["rpn_box"] + parts["roi_cls"] + parts["roi_box"]
    )


def test_detection_loss_reaches_every_parameter(tiny_manifest):
    """Test: backward de la pérdida llega a todos los parámetros del detector"""
    dataset = generate_dataset(tiny_manifest)
    detector = MiniDetector(dataset.label_space.source_classes, SMALL, seed=0)
    sample = dataset.source_train[1]
    annotations = sample.training_annotations()
    with Tape():
        out = detector.forward(sample.image, extra_rois=annotations.boxes)
        backward(detection_loss(out, annotations, detector).total)
    for name, param in detector.named_parameters().items():
        assert param.grad is not None, name
        assert np.all(np.isfinite(param.grad)), name


def test_detection_loss_backbone_gradient_matches_finite_differences(tiny_manifest, monkeypatch):
    """
    Test: d(L_DET)/d(kernels del backbone) coincide con diferencias finitas

    Las propuestas se fijan a las del punto base y se tratan como constantes:
    la selección (NMS, top-k) no es diferenciable y moverla cambiaría la función.
    """
    dataset = generate_dataset(tiny_manifest)
    detector = MiniDetector(dataset.label_space.source_classes, SMALL, seed=0)
    sample = dataset.source_train[1]
    annotations = sample.training_annotations()
    frozen = detector.select_proposals(detector.rpn_forward(detector.backbone_forward(sample.image)))
    monkeypatch.setattr(detector, "select_proposals", lambda rpn, top_k=None: frozen)

    def loss_value() -> float:
        out = detector.forward(sample.image, extra_rois=annotations.boxes)
        return detection_loss(out, annotations, detector).total.item()

    with Tape():
        out = detector.forward(sample.image, extra_rois=annotations.boxes)
        backward(detection_loss(out, annotations, detector).total)

    h = 1e-5
    params = detector.named_parameters()
    for name in ("det.conv0.w", "det.conv1.w"):
        param = params[name]
        analytic = param.grad.reshape(-1)
        picks = np.argsort(-np.abs(analytic), kind="stable")[:6]
        numeric = []
        for i in picks:
            original = param.values.flat[i]
            param.values.flat[i] = original + h
            plus = loss_value()
            param.values.flat[i] = original - h
            minus = loss_value()
            param.values.flat[i] = original
            numeric.append((plus - minus) / (2 * h))
        assert np.any(analytic[picks] != 0.0), name
        assert relative_error(analytic[picks], np.array(numeric)) < 1e-4, name


def test_unknown_class_in_annotations(detector, rng):
    """Test: clase ajena al espacio de la fuente"""
    annotations = AnnotationSet(Domain.SOURCE, np.array([[0.0, 0.0, 8.0, 8.0]]), np.array([7]))
    out = detector.forward(rng.uniform(size=(32, 32, 3)))
    with pytest.raises(ConfigurationError):
        detection_loss(out, annotations, detector)


# Checkpoint
def test_checkpoint_round_trip(detector, tmp_path, rng):
    """Test: guardar y cargar reproduce las detecciones"""
    path = save_checkpoint(tmp_path / "model.bin", detector.state_arrays(), {"method": "DAF", "seed": 2})
    arrays, meta = load_checkpoint(path)
    assert meta == {"method": "DAF", "seed": 2}

    restored = MiniDetector([1, 3, 5], SMALL, seed=99)
    restored.load_arrays(arrays)
    image = rng.uniform(size=(32, 32, 3))
    assert detector.detect(image) == restored.detect(image)


def test_checkpoint_rejects_foreign_file(tmp_path):
    """Test: archivo sin cabecera de checkpoint"""
    path = tmp_path / "junk.bin"
    path.write_bytes(b"hola\nEND\n")
    with pytest.raises(ConfigurationError):
        load_checkpoint(path)


def test_load_arrays_shape_mismatch(detector):
    """Test: arreglos con formas de otro detector"""
    other = MiniDetector([1, 3, 5, 7], SMALL)
    with pytest.raises(ShapeMismatchError):
        detector.load_arrays(other.state_arrays())
