"""Axis-aligned box arithmetic in continuous pixel-edge coordinates: quarter-turn mapping, IoU and
non-maximum suppression.
"""
import enum
from collections import namedtuple

import numpy as np


class BoundingBox(namedtuple('BoundingBox', ['x_min', 'y_min', 'x_max', 'y_max'])):
    """Axis-aligned box with continuous edge coordinates (x_min <= x_max, y_min <= y_max)."""

    __slots__ = ()

    def __new__(cls, x_min, y_min, x_max, y_max):
        if not (x_min <= x_max and y_min <= y_max):
            raise ValueError(f'Inverted box corners: ({x_min}, {y_min}, {x_max}, {y_max}).')
        return super().__new__(cls, x_min, y_min, x_max, y_max)

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2

    def inside(self, image_width, image_height):
        return self.x_min >= 0 and self.y_min >= 0 and \
            self.x_max <= image_width and self.y_max <= image_height

    def clip(self, image_width, image_height):
        """Return the box clipped to [0, image_width] x [0, image_height]."""
        def _clamp(v, hi):
            return min(max(v, 0), hi)
        return BoundingBox(_clamp(self.x_min, image_width), _clamp(self.y_min, image_height),
                           _clamp(self.x_max, image_width), _clamp(self.y_max, image_height))

    def to_list(self):
        return [float(v) for v in self]

    @classmethod
    def from_list(cls, values):
        if len(values) != 4:
            raise ValueError(f'A box needs 4 coordinates, got {values}.')
        return cls(*values)


class QuarterTurn(enum.IntEnum):
    """Counterclockwise rotation by a multiple of 90 degrees."""

    R0 = 0
    R90 = 90
    R180 = 180
    R270 = 270

    @property
    def index(self):
        """Class index of the angle (0..3) used as rotation-prediction label."""
        return self.value // 90

    @classmethod
    def from_index(cls, index):
        return cls(90 * (index % 4))


def rotated_size(turn, image_width, image_height):
    """(width, height) of an image after the given quarter turn."""
    if QuarterTurn(turn) in (QuarterTurn.R90, QuarterTurn.R270):
        return image_height, image_width
    return image_width, image_height


def rotate_box(box, turn, image_width, image_height):
    """Map a box into the frame of the image rotated counterclockwise by turn.

    Point maps: 90 -> (x, y) -> (y, W - x); 180 -> (W - x, H - y); 270 -> (H - y, x).

    Args:
        box (BoundingBox): Box inside [0, W] x [0, H].
        turn (QuarterTurn): Rotation angle.
        image_width (float): W, width of the unrotated image.
        image_height (float): H, height of the unrotated image.

    Returns:
        (BoundingBox): Box in the rotated image's coordinate frame.

    Raises:
        ValueError: If the box lies outside the image.
    """
    if not box.inside(image_width, image_height):
        raise ValueError(f'{box} lies outside the {image_width}x{image_height} image.')
    w, h = image_width, image_height
    x0, y0, x1, y1 = box
    turn = QuarterTurn(turn)
    if turn == QuarterTurn.R0:
        return box
    if turn == QuarterTurn.R90:
        return BoundingBox(y0, w - x1, y1, w - x0)
    if turn == QuarterTurn.R180:
        return BoundingBox(w - x1, h - y1, w - x0, h - y0)
    return BoundingBox(h - y1, x0, h - y0, x1)


def iou(a, b):
    """Intersection over union of two boxes; 0 when the union has zero area."""
    inter_w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    inter_h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def nms(detections, iou_threshold):
    """Greedy non-maximum suppression.

    Args:
        detections (list): (BoundingBox, score) pairs.
        iou_threshold (float): Boxes with IoU strictly above this against a kept box are dropped.

    Returns:
        (list): Kept (BoundingBox, score) pairs, by descending score; ties keep input order.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i][1], i))
    kept = []
    for i in order:
        box = detections[i][0]
        if all(iou(box, other) <= iou_threshold for other, _ in kept):
            kept.append(detections[i])
    return kept


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU of two box lists as a (len(boxes_a), len(boxes_b)) array."""
    a = np.asarray([list(b) for b in boxes_a], dtype=np.float64).reshape(-1, 4)
    b = np.asarray([list(b) for b in boxes_b], dtype=np.float64).reshape(-1, 4)
    inter_w = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    inter_h = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(inter_w, 0, None) * np.clip(inter_h, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)
