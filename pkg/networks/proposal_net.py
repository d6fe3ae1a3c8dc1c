"""Anchor objectness scoring and the per-proposal heads (classification, box regression and
proposal-based rotation prediction) that read mean-pooled RoI features.
"""
from networks import layers
from networks import tensor as T


class ObjectnessHead(layers.Module):
    """1x1 convolution giving one objectness logit per anchor size at every feature cell."""

    def __init__(self, in_channels=16, n_anchors=3):
        self.n_anchors = n_anchors
        self.score = layers.Dense(in_channels, n_anchors)

    def __call__(self, features):
        """Return the (height * width * n_anchors,) logits in raster order (cell-major)."""
        height, width, channels = features.shape
        cells = T.reshape(features, (height * width, channels))
        return T.reshape(self.score(cells), (height * width * self.n_anchors,))


class ProposalHeads(layers.Module):
    """Shared dense trunk followed by the classification, box and rotation heads."""

    def __init__(self, in_features=16, hidden=32, n_outputs=4, n_angles=4):
        """Instantiate the heads.

        Args:
            in_features (int): Size of the pooled RoI feature.
            hidden (int): Width of the trunk.
            n_outputs (int): Number of classes including background.
            n_angles (int): Number of rotation classes.
        """
        self.trunk = layers.Dense(in_features, hidden)
        self.classifier = layers.Dense(hidden, n_outputs)
        self.box = layers.Dense(hidden, 4)
        self.rotation = layers.Dense(hidden, n_angles)

    def hidden(self, roi_features):
        return T.relu(self.trunk(roi_features))

    def class_logits(self, roi_features):
        return self.classifier(self.hidden(roi_features))

    def box_deltas(self, roi_features):
        return self.box(self.hidden(roi_features))

    def rotation_logits(self, roi_features):
        return self.rotation(self.hidden(roi_features))
