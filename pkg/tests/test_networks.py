import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from networks import tensor as T
from rpcl_detector import RpclDetector
from utilities.detection_result import decode_box, encode_box
from utilities.geometry import BoundingBox
from utilities.losses import uda_loss

T.set_default_dtype('float64')


def _detector(seed=0, **kwargs):
    return RpclDetector(**kwargs).initialize(np.random.default_rng(seed))


def _image(seed, size=64):
    return np.random.default_rng(seed).uniform(size=(size, size, 3))


def test_feature_shape():
    features = _detector().extract_features(_image(0))
    assert features.shape == (16, 16, 16)


def test_features_of_zero_image_are_zero():
    features = _detector().extract_features(np.zeros((64, 64, 3)))
    assert np.all(features.values == 0)


def test_image_size_must_match_stride():
    with pytest.raises(ValueError):
        _detector().extract_features(np.zeros((62, 62, 3)))


def test_anchor_pool():
    detector = RpclDetector()
    boxes, cells = detector.anchors((16, 16, 16))
    assert len(boxes) == len(cells) == 768
    # The 32 px anchor of the corner cell is clipped at the image border
    assert boxes[2] == BoundingBox(0, 0, 18, 18)
    assert boxes[0] == BoundingBox(0, 0, 8, 8)
    for box in boxes:
        assert box.inside(64, 64)


def test_propose_returns_top_k():
    detector = _detector(top_k=5)
    features = detector.extract_features(_image(1))
    proposals = detector.propose(features)
    assert len(proposals) == 5
    assert proposals.roi_features.shape == (5, 16)
    assert len(detector.propose(features, top_k=1)) == 1
    first = proposals[0]
    assert first.box == proposals.boxes[0]
    assert first.roi_feature.shape == (1, 16)
    assert [p.objectness for p in proposals] == list(proposals.objectness)
    logits = detector.objectness_logits(features).values
    assert np.all(np.diff(logits[proposals.anchor_indices]) <= 0)
    with pytest.raises(ValueError):
        detector.propose(features, top_k=0)


def test_zero_model_ties_break_by_raster_order():
    detector = RpclDetector(top_k=4)
    proposals = detector.propose(detector.extract_features(_image(2)))
    assert np.array_equal(proposals.anchor_indices, np.arange(4))
    assert np.allclose(proposals.objectness, 0.5)


def test_zero_heads_give_uniform_probabilities():
    detector = RpclDetector(top_k=3)
    features = detector.extract_features(_image(3))
    proposals = detector.propose(features)
    assert np.allclose(detector.classify_proposals(proposals).values, 0.25)
    assert np.allclose(detector.predict_rotation(proposals).values, 0.25)
    assert np.allclose(detector.predict_rotation_image(features).values, 0.25)
    assert np.allclose(detector.classify_domain(features).values, 0.5)


def test_full_image_roi_equals_global_mean():
    detector = _detector()
    features = detector.extract_features(_image(4))
    pooled = detector.pool_proposals(features, [BoundingBox(0, 0, 64, 64)])
    assert np.array_equal(pooled.roi_features.values, T.global_mean(features).values)


def test_box_without_cell_center_pools_its_center_cell():
    detector = RpclDetector()
    cells = detector.cells_in_box(BoundingBox(4.5, 0.5, 5.5, 1.5), (16, 16))
    assert np.array_equal(cells, [1])


def test_box_codec_round_trip():
    anchor = BoundingBox(10, 12, 30, 32)
    box = BoundingBox(13.5, 9, 41, 28.25)
    decoded = decode_box(encode_box(box, anchor), anchor)
    assert np.allclose(decoded, box)
    assert np.allclose(encode_box(anchor, anchor), 0)


def test_decode_clamps_log_scale():
    decoded = decode_box([0, 0, 50, 50], BoundingBox(0, 0, 16, 16))
    assert np.isfinite(decoded.width) and np.isclose(decoded.width, 1000)


def test_zero_reversal_blocks_alignment_gradient():
    detector = _detector(reversal_strength=0.0)
    with T.Tape():
        loss = uda_loss(detector, detector.extract_features(_image(5)),
                        detector.extract_features(_image(6)))
    T.backward(loss)
    for name, param in detector.named_parameters():
        if name.startswith('feature_extractor'):
            assert param.grad is None or np.all(param.grad == 0)
    assert np.any(detector.domain_classifier.out.bias.grad != 0)


def test_reversal_flips_feature_gradients():
    grads = {}
    for beta in (1.0, -1.0):
        detector = _detector(seed=7)
        with T.Tape():
            loss = uda_loss(detector, detector.extract_features(_image(5)),
                            detector.extract_features(_image(6)), reversal_strength=beta)
        T.backward(loss)
        grads[beta] = detector.feature_extractor.conv1.weight.grad
    assert np.any(grads[1.0] != 0)
    assert np.allclose(grads[1.0], -grads[-1.0])


def test_detect_on_zero_model_with_high_threshold_is_empty():
    assert RpclDetector().detect(_image(8), score_threshold=0.9) == []


def test_detections_are_bounded_and_inside_the_image():
    detector = _detector(seed=1, top_k=8)
    detections = detector.detect(_image(9), score_threshold=0.0, nms_iou=1.0)
    assert 0 < len(detections) <= 8 * 3
    for detection in detections:
        assert detection.box.inside(64, 64)
        assert 0 <= detection.class_id < 3
        assert 0 <= detection.confidence <= 1


def test_detect_records_nothing():
    detector = _detector()
    with T.Tape() as tape:
        detector.detect(_image(10))
    assert len(tape) == 0


def test_save_load_round_trip(tmp_path):
    path = str(tmp_path / 'checkpoint.bin')
    detector = _detector(seed=3)
    detector.save(path)
    restored = RpclDetector().load(path)
    for name, param in detector.named_parameters():
        assert np.array_equal(param.values, restored.parameters()[name].values)
    image = _image(11)
    assert detector.detect(image, 0.0) == restored.detect(image, 0.0)


def test_load_rejects_other_architecture(tmp_path):
    path = str(tmp_path / 'checkpoint.bin')
    _detector().save(path)
    with pytest.raises(ValueError):
        RpclDetector(anchor_sizes=(12, 20)).load(path)


def test_load_rejects_corrupt_file(tmp_path):
    path = tmp_path / 'checkpoint.bin'
    path.write_bytes(b'not a checkpoint')
    with pytest.raises(IOError):
        RpclDetector().load(str(path))
