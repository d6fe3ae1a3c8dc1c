import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utilities.geometry import (BoundingBox, QuarterTurn, iou, iou_matrix, nms, rotate_box,
                                rotated_size)
from utilities.imaging import rotate_image


def _mask_oracle(box, turn, width, height):
    mask = np.zeros((height, width, 3))
    mask[int(box.y_min):int(box.y_max), int(box.x_min):int(box.x_max)] = 1
    rows, cols = np.nonzero(rotate_image(mask, turn)[:, :, 0])
    return BoundingBox(cols.min(), rows.min(), cols.max() + 1, rows.max() + 1)


@pytest.mark.parametrize('turn', list(QuarterTurn))
def test_rotate_box_matches_mask_rotation(turn):
    rng = np.random.default_rng(turn.value)
    width, height = 24, 16
    for _ in range(1000):
        x0, x1 = np.sort(rng.choice(width + 1, size=2, replace=False))
        y0, y1 = np.sort(rng.choice(height + 1, size=2, replace=False))
        box = BoundingBox(int(x0), int(y0), int(x1), int(y1))
        assert rotate_box(box, turn, width, height) == _mask_oracle(box, turn, width, height)


def test_rotated_size():
    assert rotated_size(QuarterTurn.R90, 24, 16) == (16, 24)
    assert rotated_size(QuarterTurn.R180, 24, 16) == (24, 16)


def test_four_quarter_turns_are_identity():
    rng = np.random.default_rng(0)
    image = rng.uniform(size=(10, 6, 3))
    box = BoundingBox(1.25, 2.5, 4.75, 9.0)
    rotated_image, rotated_box = image, box
    width, height = 6, 10
    for _ in range(4):
        rotated_box = rotate_box(rotated_box, QuarterTurn.R90, width, height)
        rotated_image = rotate_image(rotated_image, QuarterTurn.R90)
        width, height = rotated_size(QuarterTurn.R90, width, height)
    assert rotated_box == box
    assert np.array_equal(rotated_image, image)


def test_rotate_box_outside_image_rejected():
    with pytest.raises(ValueError):
        rotate_box(BoundingBox(-1, 0, 5, 5), QuarterTurn.R90, 10, 10)


def test_inverted_box_rejected():
    with pytest.raises(ValueError):
        BoundingBox(5, 0, 1, 3)


def test_quarter_turn_index():
    assert QuarterTurn.from_index(3) == QuarterTurn.R270
    assert QuarterTurn.R180.index == 2


def test_iou():
    a = BoundingBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(10, 0, 20, 10)) == 0.0
    assert np.isclose(iou(a, BoundingBox(5, 0, 15, 10)), 50 / 150)
    assert iou(BoundingBox(3, 3, 3, 3), BoundingBox(3, 3, 3, 3)) == 0.0


def test_iou_matrix_matches_pairwise():
    rng = np.random.default_rng(2)
    boxes = []
    for _ in range(12):
        x0, y0 = rng.uniform(0, 20, size=2)
        boxes.append(BoundingBox(x0, y0, x0 + rng.uniform(0, 10), y0 + rng.uniform(0, 10)))
    matrix = iou_matrix(boxes[:5], boxes[5:])
    for i, a in enumerate(boxes[:5]):
        for j, b in enumerate(boxes[5:]):
            assert np.isclose(matrix[i, j], iou(a, b))


def test_nms():
    detections = [(BoundingBox(0, 0, 10, 10), 0.8),
                  (BoundingBox(1, 1, 11, 11), 0.9),
                  (BoundingBox(30, 30, 40, 40), 0.5),
                  (BoundingBox(0, 0, 10, 10), 0.9)]
    kept = nms(detections, 0.5)
    # Equal scores keep input order, and each suppresses the overlapping boxes after it
    assert kept == [detections[1], detections[2]]
    assert nms([], 0.5) == []
