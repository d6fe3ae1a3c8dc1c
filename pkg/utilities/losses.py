from collections import namedtuple

import numpy as np

from networks import tensor as T
from utilities.detection_result import encode_box
from utilities.geometry import QuarterTurn, iou_matrix
from utilities.imaging import augment

POSITIVE_IOU = 0.5
NEGATIVE_IOU = 0.3
NEGATIVES_PER_POSITIVE = 3
ROTATION_MODES = ('PropRot', 'ImgRot')

DetectionLossTerms = namedtuple('DetectionLossTerms', ['objectness', 'classification', 'box'])
ConsistencyTargets = namedtuple('ConsistencyTargets',
                                ['boxes', 'anchor_indices', 'pseudo_labels', 'gate'])


class LossWeights(namedtuple('LossWeights', ['alpha', 'lambda1', 'lambda2', 'sigma'])):
    """Weights of the alignment, rotation and consistency terms and the confidence gate."""

    __slots__ = ()

    def __new__(cls, alpha=0.1, lambda1=0.1, lambda2=0.1, sigma=0.8):
        if min(alpha, lambda1, lambda2) < 0:
            raise ValueError(f'Loss weights must be non-negative, got alpha={alpha}, '
                             f'lambda1={lambda1}, lambda2={lambda2}.')
        if not 0 <= sigma <= 1:
            raise ValueError(f'sigma must lie in [0, 1], got {sigma}.')
        return super().__new__(cls, alpha, lambda1, lambda2, sigma)

    @classmethod
    def from_params(cls, weights):
        return cls(**{k: weights[k] for k in cls._fields if k in weights})


LossBreakdown = namedtuple('LossBreakdown',
                           ['l_det', 'l_uda', 'l_rp', 'l_cl', 'total', 'cl_accept_fraction'])


def cross_entropy(probs, labels):
    """Mean negative log-probability of the labelled column of each row.

    Args:
        probs (Tensor): (n, classes) probability rows.
        labels (array_like): n integer labels.

    Returns:
        (Tensor): Scalar loss.
    """
    return -T.mean(T.log(T.take(probs, labels)))


def _binary_cross_entropy(logits, targets):
    p = T.sigmoid(logits)
    targets = np.asarray(targets, dtype=p.values.dtype)
    terms = T.multiply(targets, T.log(p)) + T.multiply(1.0 - targets, T.log(1.0 - p))
    return -T.mean(terms)


def match_anchors(anchor_boxes, annotations):
    """Assign every anchor a training label from its overlap with the ground truth.

    Anchors with IoU >= 0.5 against some ground-truth box are positives, anchors whose best IoU
    is below 0.3 are negatives and the rest are ignored. The best anchor of every ground-truth
    box is positive regardless of its IoU (first in raster order on ties).

    Returns:
        tuple(numpy.ndarray, numpy.ndarray, numpy.ndarray): Per-anchor label (1 positive,
            0 negative, -1 ignored), index of the matched annotation and best IoU.
    """
    overlaps = iou_matrix(anchor_boxes, [a.box for a in annotations])
    best_iou = overlaps.max(axis=1)
    matched = overlaps.argmax(axis=1)
    labels = -np.ones(len(anchor_boxes), dtype=int)
    labels[best_iou < NEGATIVE_IOU] = 0
    labels[best_iou >= POSITIVE_IOU] = 1
    for g in range(len(annotations)):
        best_anchor = int(np.argmax(overlaps[:, g]))
        labels[best_anchor] = 1
        matched[best_anchor] = g
    return labels, matched, best_iou


def detection_loss_terms(detector, features, proposals, annotations):
    """Supervised detection loss of one labelled image, split into its three terms.

    Objectness is trained with binary cross-entropy over every non-ignored anchor. The
    classification and box heads are trained on all positive anchors plus the proposals that
    overlap no object (IoU < 0.5), the latter in objectness order and capped at three per
    positive.

    Args:
        detector (RpclDetector): Model producing the logits.
        features (Tensor): Feature map of the image.
        proposals (ProposalSet): Proposals of the image; only their anchor indices are used.
        annotations (list): Annotation tuples of the image.

    Returns:
        (DetectionLossTerms): Objectness, classification and box terms (scalar Tensors).
    """
    if not annotations:
        raise ValueError('The detection loss needs a scene with at least one annotation.')
    anchor_boxes, anchor_cells = detector.anchors(features.shape)
    labels, matched, best_iou = match_anchors(anchor_boxes, annotations)

    considered = np.flatnonzero(labels >= 0)
    logits = T.reshape(detector.objectness_logits(features), (len(anchor_boxes), 1))
    objectness = _binary_cross_entropy(T.rows(logits, considered), labels[considered, None])

    positives = np.flatnonzero(labels == 1)
    negatives = [a for a in proposals.anchor_indices
                 if labels[a] != 1 and best_iou[a] < POSITIVE_IOU]
    negatives = np.asarray(negatives[:NEGATIVES_PER_POSITIVE * len(positives)], dtype=int)
    selected = np.concatenate([positives, negatives])
    class_targets = np.concatenate([
        [annotations[matched[a]].class_id + 1 for a in positives],
        np.zeros(len(negatives), dtype=int)]).astype(int)

    roi_features = T.region_mean(features, [anchor_cells[a] for a in selected])
    hidden = detector.proposal_heads.hidden(roi_features)
    probs = T.softmax(detector.proposal_heads.classifier(hidden))
    classification = cross_entropy(probs, class_targets)

    box_targets = np.stack([encode_box(annotations[matched[a]].box, anchor_boxes[a])
                            for a in positives])
    deltas = T.rows(detector.proposal_heads.box(hidden), np.arange(len(positives)))
    box = T.sum(T.smooth_l1(deltas - box_targets)) * (1.0 / len(positives))
    return DetectionLossTerms(objectness, classification, box)


def detection_loss(detector, features, proposals, annotations):
    terms = detection_loss_terms(detector, features, proposals, annotations)
    return terms.objectness + terms.classification + terms.box


def uda_loss(detector, source_features, target_features, reversal_strength=None):
    """Domain classification loss behind gradient reversal (source = 0, target = 1).

    The classifier minimises it while the reversed gradient pushes the shared features to
    confuse the domains.
    """
    source = cross_entropy(detector.classify_domain(source_features, reversal_strength), [0])
    target = cross_entropy(detector.classify_domain(target_features, reversal_strength), [1])
    return (source + target) * 0.5


def _rotation_term(detector, rotated_image, turn, mode, top_k, boxes):
    label = QuarterTurn(turn).index
    features = detector.extract_features(rotated_image)
    if mode == 'ImgRot':
        return cross_entropy(detector.predict_rotation_image(features), [label])
    if boxes is None:
        proposals = detector.propose(features, top_k)
    else:
        proposals = detector.pool_proposals(features, boxes)
    probs = detector.predict_rotation(proposals)
    return cross_entropy(probs, np.full(len(proposals), label))


def rotation_loss(detector, rotated_source, source_turn, rotated_target=None, target_turn=None,
                  mode='PropRot', top_k=None, source_boxes=None, target_boxes=None):
    """Quarter-turn prediction loss, averaged over the per-domain terms.

    With PropRot each domain's term is the mean cross-entropy over the proposals of the rotated
    image; with ImgRot it is a single cross-entropy on globally pooled features.

    Args:
        detector (RpclDetector): Model.
        rotated_source (numpy.ndarray): Source image already rotated by source_turn.
        source_turn (QuarterTurn): Rotation applied to the source image.
        rotated_target (numpy.ndarray, optional): Target image already rotated by target_turn.
            When None only the source term is used.
        target_turn (QuarterTurn, optional): Rotation applied to the target image.
        mode (str): 'PropRot' or 'ImgRot'.
        top_k (int, optional): Proposals per image.
        source_boxes (list, optional): Boxes in the rotated source frame to pool at instead of
            proposing on the rotated image.
        target_boxes (list, optional): Same for the target image.

    Returns:
        (Tensor): Scalar loss.
    """
    if mode not in ROTATION_MODES:
        raise KeyError(f'{mode} is not a rotation mode. Available modes are: '
                       + ' '.join(ROTATION_MODES))
    terms = [_rotation_term(detector, rotated_source, source_turn, mode, top_k, source_boxes)]
    if rotated_target is not None:
        terms.append(_rotation_term(detector, rotated_target, target_turn, mode, top_k,
                                    target_boxes))
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (1.0 / len(terms))


def gated_pseudo_label_loss(pseudo_probs, augmented_probs, sigma):
    """Cross-entropy of augmented predictions against confident one-hot pseudo-labels.

    Args:
        pseudo_probs (numpy.ndarray): (k, classes) probabilities on the unperturbed image. They
            are constants: no gradient flows into them.
        augmented_probs (Tensor): (k, classes) probabilities at the same boxes on the
            augmented image.
        sigma (float): Proposals whose top probability is below sigma contribute 0.

    Returns:
        tuple(Tensor, float): Loss averaged over all k proposals, and the accepted fraction.
    """
    pseudo_probs = np.asarray(pseudo_probs)
    pseudo_labels = np.argmax(pseudo_probs, axis=1)
    gate = (pseudo_probs.max(axis=1) >= sigma).astype(augmented_probs.values.dtype)
    return _gated_loss(augmented_probs, pseudo_labels, gate)


def _gated_loss(augmented_probs, pseudo_labels, gate):
    gate = np.asarray(gate, dtype=augmented_probs.values.dtype)
    nll = -T.log(T.take(augmented_probs, pseudo_labels))
    loss = T.mean(T.multiply(nll, gate))
    return loss, float(gate.mean()) if gate.size else 0.0


def consistency_targets(detector, image, sigma, top_k=None, features=None):
    """Proposals, pseudo-labels and gate of the unperturbed image, computed off the tape.

    A feature map of the image computed earlier in the step may be passed to skip the
    feature extraction; it is detached first.
    """
    with T.no_grad():
        if features is None:
            features = detector.extract_features(image)
        proposals = detector.propose(features.detach(), top_k)
        probs = detector.classify_proposals(proposals).values
    # argmax picks the lowest class index on ties
    return ConsistencyTargets(boxes=proposals.boxes,
                              anchor_indices=proposals.anchor_indices,
                              pseudo_labels=np.argmax(probs, axis=1),
                              gate=probs.max(axis=1) >= sigma)


def consistency_loss_one_image(detector, image, policy, seed, sigma, top_k=None, targets=None):
    """Consistency between an image and its position-preserving augmentation.

    Proposals and pseudo-labels come from the original image. The augmented image is pooled
    at bitwise the same boxes and its class probabilities are pulled towards the confident
    pseudo-labels.

    Args:
        detector (RpclDetector): Model.
        image (numpy.ndarray): (H, W, 3) image of either domain.
        policy (AugmentationPolicy): Augmentation policy.
        seed (int): Seed of the augmentation draw.
        sigma (float): Confidence threshold of the gate.
        top_k (int, optional): Proposals per image.
        targets (ConsistencyTargets, optional): Precomputed targets to hold fixed.

    Returns:
        tuple(Tensor, float): Scalar loss and the fraction of proposals passing the gate.
    """
    if targets is None:
        targets = consistency_targets(detector, image, sigma, top_k)
    augmented = augment(image, policy, seed)
    features = detector.extract_features(augmented)
    proposals = detector.pool_proposals(features, targets.boxes, targets.anchor_indices)
    probs = detector.classify_proposals(proposals)
    return _gated_loss(probs, targets.pseudo_labels, targets.gate)


def consistency_loss(detector, source_image, target_image, policy, seeds, sigma, top_k=None,
                     targets=(None, None)):
    """Mean of the per-image consistency losses of the source and target images.

    Args:
        seeds (tuple(int, int)): Augmentation seeds of the source and target image.
        target_image (numpy.ndarray, optional): None uses the source term only.
        targets (tuple): Precomputed ConsistencyTargets of each image, or None to compute them.

    Returns:
        tuple(Tensor, float): Scalar loss and the fraction of accepted proposals over both
            images, each image weighted by its own proposal count.
    """
    images = [source_image] if target_image is None else [source_image, target_image]
    losses, accepted, counted = [], 0.0, 0
    for image, seed, frozen in zip(images, seeds, targets):
        if frozen is None:
            frozen = consistency_targets(detector, image, sigma, top_k)
        loss, fraction = consistency_loss_one_image(detector, image, policy, seed, sigma,
                                                    top_k, frozen)
        losses.append(loss)
        accepted += fraction * len(frozen.boxes)
        counted += len(frozen.boxes)
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    return total * (1.0 / len(losses)), accepted / counted if counted else 0.0


def total_loss(l_det, l_uda, l_rp, l_cl, weights, cl_accept_fraction=0.0):
    """Combine the task losses: l_det + alpha * l_uda + lambda1 * l_rp + lambda2 * l_cl.

    A term passed as None belongs to an inactive task: it is left out of the total and
    reported as 0.

    Returns:
        tuple(Tensor, LossBreakdown): Scalar total on the tape and its float breakdown.
    """
    weighted = [(l_det, 1.0), (l_uda, weights.alpha), (l_rp, weights.lambda1),
                (l_cl, weights.lambda2)]
    total = None
    for term, weight in weighted:
        if term is None:
            continue
        contribution = term if weight == 1.0 else term * weight
        total = contribution if total is None else total + contribution
    if total is None:
        raise ValueError('At least one loss term must be active.')

    def _value(term):
        return 0.0 if term is None else term.item()
    breakdown = LossBreakdown(l_det=_value(l_det), l_uda=_value(l_uda), l_rp=_value(l_rp),
                              l_cl=_value(l_cl), total=total.item(),
                              cl_accept_fraction=float(cl_accept_fraction))
    return total, breakdown
