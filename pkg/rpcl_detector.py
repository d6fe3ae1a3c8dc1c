import numpy as np

from networks import layers
from networks import tensor as T
from networks.auxiliary_net import DomainClassifier, ImageRotationHead
from networks.feature_net import FeatureExtractor
from networks.proposal_net import ObjectnessHead, ProposalHeads
from utilities.checkpoint import load_parameters, save_parameters
from utilities.detection_result import Detection, ProposalSet, decode_box
from utilities.geometry import BoundingBox, nms


class RpclDetector(layers.Module):
    """Tiny anchor-based detector with the auxiliary heads used for cross-domain training.

    All heads read the features of a single shared extractor. Proposals are the top-k anchors
    by objectness; their features are the mean of the feature cells whose centers fall inside
    the (clipped) anchor box.
    """

    ANCHOR_SIZES = (12, 20, 32)
    N_ANGLES = 4

    def __init__(self, n_classes=3, top_k=32, reversal_strength=1.0, anchor_sizes=None):
        """Instantiate the detector with all-zero parameters (see initialize()).

        Args:
            n_classes (int): Number of foreground classes; the classifier adds background.
            top_k (int): Default number of proposals per image.
            reversal_strength (float): beta of the gradient reversal in front of the domain
                classifier.
            anchor_sizes (tuple, optional): Anchor side lengths in pixels.
        """
        if top_k < 1:
            raise ValueError(f'top_k must be at least 1, got {top_k}.')
        self.n_classes = n_classes
        self.top_k = top_k
        self.reversal_strength = reversal_strength
        self.anchor_sizes = tuple(anchor_sizes or RpclDetector.ANCHOR_SIZES)

        self.feature_extractor = FeatureExtractor()
        channels = self.feature_extractor.out_channels
        self.objectness = ObjectnessHead(channels, len(self.anchor_sizes))
        self.proposal_heads = ProposalHeads(channels, 32, n_classes + 1, self.N_ANGLES)
        self.image_rotation = ImageRotationHead(channels, self.N_ANGLES)
        self.domain_classifier = DomainClassifier(channels, 8)
        self._anchor_cache = {}

    @property
    def stride(self):
        return self.feature_extractor.total_stride

    def extract_features(self, image):
        """(H, W, 3) image -> (H / 4, W / 4, 16) feature map Tensor."""
        return self.feature_extractor(image)

    def cells_in_box(self, box, feature_shape):
        """Raster indices of the feature cells whose image-space centers lie inside box.

        Boundaries are inclusive. A box containing no cell center falls back to the cell
        containing the box center.
        """
        height, width = feature_shape[:2]
        xs = (np.arange(width) + 0.5) * self.stride
        ys = (np.arange(height) + 0.5) * self.stride
        cols = np.flatnonzero((xs >= box.x_min) & (xs <= box.x_max))
        rows = np.flatnonzero((ys >= box.y_min) & (ys <= box.y_max))
        if cols.size and rows.size:
            return (rows[:, None] * width + cols[None, :]).ravel()
        cx, cy = box.center
        i = min(max(int(cy // self.stride), 0), height - 1)
        j = min(max(int(cx // self.stride), 0), width - 1)
        return np.array([i * width + j])

    def anchors(self, feature_shape):
        """Anchor pool of a feature map shape.

        Returns:
            tuple(list, list): Clipped anchor boxes in raster order (index (i * w + j) * A + a)
                and the pooling cell indices of each anchor.
        """
        key = tuple(feature_shape[:2])
        if key not in self._anchor_cache:
            height, width = key
            image_w, image_h = width * self.stride, height * self.stride
            boxes, cells = [], []
            for i in range(height):
                for j in range(width):
                    cx, cy = (j + 0.5) * self.stride, (i + 0.5) * self.stride
                    for side in self.anchor_sizes:
                        box = BoundingBox(cx - side / 2, cy - side / 2,
                                          cx + side / 2, cy + side / 2).clip(image_w, image_h)
                        boxes.append(box)
                        cells.append(self.cells_in_box(box, key))
            self._anchor_cache[key] = (boxes, cells)
        return self._anchor_cache[key]

    def objectness_logits(self, features):
        return self.objectness(features)

    def propose(self, features, top_k=None):
        """Return the top_k anchors as a ProposalSet.

        Anchors are ranked by descending objectness logit, which orders them exactly as the
        sigmoid scores would. Equal logits keep raster order (index (i * w + j) * A + a), so the
        anchor with the lower index comes first.
        """
        top_k = self.top_k if top_k is None else top_k
        if top_k < 1:
            raise ValueError(f'top_k must be at least 1, got {top_k}.')
        logits = self.objectness_logits(features)
        order = np.argsort(-logits.values, kind='stable')[:top_k]
        boxes, cells = self.anchors(features.shape)
        objectness = 0.5 * (1.0 + np.tanh(0.5 * logits.values[order]))
        roi_features = T.region_mean(features, [cells[a] for a in order])
        return ProposalSet([boxes[a] for a in order], objectness, order, roi_features)

    def pool_proposals(self, features, boxes, anchor_indices=None, objectness=None):
        """Build a ProposalSet at fixed boxes, pooling RoI features from the given feature map."""
        boxes = list(boxes)
        if anchor_indices is None:
            anchor_indices = -np.ones(len(boxes), dtype=int)
        if objectness is None:
            objectness = np.zeros(len(boxes))
        roi_features = T.region_mean(features,
                                     [self.cells_in_box(b, features.shape) for b in boxes])
        return ProposalSet(boxes, objectness, anchor_indices, roi_features)

    def class_logits(self, roi_features):
        return self.proposal_heads.class_logits(roi_features)

    def classify_proposals(self, proposals):
        """(k, n_classes + 1) class probabilities; column 0 is background."""
        return T.softmax(self.class_logits(proposals.roi_features))

    def box_deltas(self, proposals):
        return self.proposal_heads.box_deltas(proposals.roi_features)

    def predict_rotation(self, proposals):
        """(k, 4) probabilities over the quarter turns, one row per proposal."""
        return T.softmax(self.proposal_heads.rotation_logits(proposals.roi_features))

    def predict_rotation_image(self, features):
        """(1, 4) probabilities over the quarter turns from globally pooled features."""
        return T.softmax(self.image_rotation(features))

    def classify_domain(self, features, reversal_strength=None):
        """(1, 2) probabilities of (source, target)."""
        if reversal_strength is None:
            reversal_strength = self.reversal_strength
        return T.softmax(self.domain_classifier(features, reversal_strength))

    def detect(self, image, score_threshold=0.05, nms_iou=0.5, top_k=None):
        """Run inference on one image.

        Args:
            image (numpy.ndarray): (H, W, 3) image.
            score_threshold (float): Class probabilities below this are dropped.
            nms_iou (float): IoU above which lower-scored same-class boxes are suppressed.
            top_k (int, optional): Number of proposals; defaults to the detector's top_k.

        Returns:
            (list): Detection tuples, grouped by class and sorted by confidence within a class.
        """
        image_h, image_w = image.shape[:2]
        with T.no_grad():
            features = self.extract_features(image)
            proposals = self.propose(features, top_k)
            probs = self.classify_proposals(proposals).values
            deltas = self.box_deltas(proposals).values
        per_class = {c: [] for c in range(self.n_classes)}
        for r, anchor in enumerate(proposals.boxes):
            box = None
            for c in range(1, self.n_classes + 1):
                if probs[r, c] >= score_threshold:
                    if box is None:
                        box = decode_box(deltas[r], anchor).clip(image_w, image_h)
                    per_class[c - 1].append((box, float(probs[r, c])))
        detections = []
        for class_id, candidates in per_class.items():
            for box, confidence in nms(candidates, nms_iou):
                detections.append(Detection(box, class_id, confidence))
        return detections

    def save(self, path):
        """Write all parameters to a single checkpoint file."""
        save_parameters(path, {name: p.values for name, p in self.named_parameters()})

    def load(self, path):
        """Load parameters written by save().

        Raises:
            KeyError: If the checkpoint's parameter names differ from this detector's.
            ValueError: If a parameter shape differs.
        """
        arrays = load_parameters(path)
        params = self.parameters()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            unexpected = sorted(set(arrays) - set(params))
            raise KeyError(f'Checkpoint {path} does not match the detector. '
                           f'Missing: {missing}. Unexpected: {unexpected}.')
        for name, param in params.items():
            if arrays[name].shape != param.shape:
                raise ValueError(f'Parameter {name} has shape {arrays[name].shape} in {path}, '
                                 f'expected {param.shape}.')
            param.values = arrays[name].astype(param.values.dtype)
        return self
