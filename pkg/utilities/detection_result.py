"""Containers passed between the detector, the losses and the evaluator, and the box-delta codec
used by the box regression head.
"""
from collections import namedtuple

import numpy as np

from networks import tensor as T
from utilities.geometry import BoundingBox

# Deltas above this are clamped before exp so decoded sizes stay finite
MAX_LOG_SCALE = np.log(1000. / 16.)

Proposal = namedtuple('Proposal', ['box', 'objectness', 'roi_feature'])
Detection = namedtuple('Detection', ['box', 'class_id', 'confidence'])


class ProposalSet:
    """Top-k proposals of one image, with their RoI features pooled together on the tape.

    Attributes:
        boxes (list): BoundingBox of each proposal, in image coordinates.
        objectness (numpy.ndarray): Objectness probability of each proposal.
        anchor_indices (numpy.ndarray): Raster index of the anchor each proposal comes from.
        roi_features (Tensor): (k, channels) mean-pooled features, one row per proposal.
    """

    def __init__(self, boxes, objectness, anchor_indices, roi_features):
        assert len(boxes) == len(objectness) == len(anchor_indices) == roi_features.shape[0]
        self.boxes = list(boxes)
        self.objectness = np.asarray(objectness)
        self.anchor_indices = np.asarray(anchor_indices, dtype=int)
        self.roi_features = roi_features

    def __len__(self):
        return len(self.boxes)

    def __getitem__(self, i):
        return Proposal(box=self.boxes[i], objectness=float(self.objectness[i]),
                        roi_feature=T.rows(self.roi_features, [i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def encode_box(box, anchor):
    """Regression target (dx, dy, dw, dh) of box relative to anchor."""
    (cx, cy), (ax, ay) = box.center, anchor.center
    return np.array([(cx - ax) / anchor.width,
                     (cy - ay) / anchor.height,
                     np.log(box.width / anchor.width),
                     np.log(box.height / anchor.height)])


def decode_box(deltas, anchor):
    """Inverse of encode_box; log-scales are clamped at MAX_LOG_SCALE."""
    dx, dy, dw, dh = (float(d) for d in deltas)
    ax, ay = anchor.center
    cx = ax + dx * anchor.width
    cy = ay + dy * anchor.height
    w = anchor.width * np.exp(min(dw, MAX_LOG_SCALE))
    h = anchor.height * np.exp(min(dh, MAX_LOG_SCALE))
    return BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def detection_to_dict(detection, image_id):
    return {'image_id': int(image_id),
            'class_id': int(detection.class_id),
            'box': detection.box.to_list(),
            'confidence': float(detection.confidence)}
