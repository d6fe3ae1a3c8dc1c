"""Central finite-difference checks of the analytic gradients of every loss term.

Data-dependent selections (proposal boxes, pseudo-labels, the confidence gate) are computed once
at the base point and held fixed while parameters are perturbed, so each checked function is
smooth almost everywhere.
"""
from collections import OrderedDict

import numpy as np

from networks import tensor as T
from rpcl_detector import RpclDetector
from environments.scenes import Annotation
from utilities.geometry import BoundingBox, QuarterTurn
from utilities.imaging import AugmentationPolicy, rotate_image
from utilities.losses import (ConsistencyTargets, consistency_loss_one_image,
                              consistency_targets, detection_loss, rotation_loss, uda_loss)

EPSILON = 1e-4
ABSOLUTE_FLOOR = 1e-6
TOLERANCE = 1e-4


def relative_error(analytic, numeric):
    """|a - n| / max(|a|, |n|), or the absolute error when both are below 1e-6."""
    scale = max(abs(analytic), abs(numeric))
    if scale < ABSOLUTE_FLOOR:
        return abs(analytic - numeric)
    return abs(analytic - numeric) / scale


def analytic_gradients(loss_fn, params):
    for param in params.values():
        param.grad = None
    with T.Tape():
        loss = loss_fn()
    T.backward(loss)
    return {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.values))
            for name, p in params.items()}


def numerical_derivative(loss_fn, param, index, epsilon=EPSILON):
    original = param.values[index]
    with T.no_grad():
        param.values[index] = original + epsilon
        plus = loss_fn().item()
        param.values[index] = original - epsilon
        minus = loss_fn().item()
    param.values[index] = original
    return (plus - minus) / (2 * epsilon)


def check_gradients(loss_fn, params, rng, entries_per_param=6, epsilon=EPSILON, sign=None):
    """Compare analytic and numerical derivatives on random entries of every parameter.

    Args:
        loss_fn (callable): Returns a scalar Tensor; recorded when called under a Tape.
        params (dict): Name -> parameter Tensor.
        rng (numpy.random.Generator): Picks the checked entries.
        entries_per_param (int): Entries checked per parameter tensor (all if it has fewer).
        epsilon (float): Finite-difference step.
        sign (callable, optional): name -> factor the analytic gradient should equal times the
            numerical one (-1 behind a gradient reversal). Defaults to 1 everywhere.

    Returns:
        tuple(float, str): Largest error and the 'name[index]' where it occurred.
    """
    grads = analytic_gradients(loss_fn, params)
    worst, where = 0.0, ''
    for name, param in params.items():
        n_checked = min(entries_per_param, param.values.size)
        for flat in rng.choice(param.values.size, size=n_checked, replace=False):
            index = np.unravel_index(flat, param.shape)
            numeric = numerical_derivative(loss_fn, param, index, epsilon)
            factor = 1.0 if sign is None else sign(name)
            error = relative_error(grads[name][index], factor * numeric)
            if error > worst:
                worst, where = error, f'{name}{list(index)}'
    return worst, where


def _mixed_gate_targets(detector, image, top_k):
    # Threshold between the confidence quantiles so some proposals pass the gate and some don't
    targets = consistency_targets(detector, image, sigma=1.0, top_k=top_k)
    with T.no_grad():
        features = detector.extract_features(image)
        probs = detector.classify_proposals(detector.pool_proposals(features, targets.boxes))
    confidences = np.sort(probs.values.max(axis=1))
    sigma = 0.5 * (confidences[len(confidences) // 2 - 1] + confidences[len(confidences) // 2])
    gate = probs.values.max(axis=1) >= sigma
    return ConsistencyTargets(targets.boxes, targets.anchor_indices, targets.pseudo_labels, gate)


def gradient_suite(seed=0, image_size=8, top_k=4, entries_per_param=6):
    """Finite-difference check of every loss term on a random image pair.

    Returns:
        (OrderedDict): term name -> (max error, location).
    """
    T.set_default_dtype('float64')
    rng = np.random.default_rng(seed)
    detector = RpclDetector(n_classes=3, top_k=top_k)
    detector.initialize(rng, scale=1.0)
    params = detector.parameters()
    source = rng.uniform(size=(image_size, image_size, 3))
    target = rng.uniform(size=(image_size, image_size, 3))
    annotations = [Annotation(BoundingBox(1.0, 1.0, 6.0, 7.0), 1)]
    turns = (QuarterTurn.R90, QuarterTurn.R270)
    rotated_source = rotate_image(source, turns[0])
    rotated_target = rotate_image(target, turns[1])

    with T.no_grad():
        source_proposals = detector.propose(detector.extract_features(source), top_k)
        source_boxes = detector.propose(detector.extract_features(rotated_source), top_k).boxes
        target_boxes = detector.propose(detector.extract_features(rotated_target), top_k).boxes
    targets = _mixed_gate_targets(detector, source, top_k)
    policy = AugmentationPolicy(op_count=2, magnitude=1.0)

    def detection():
        features = detector.extract_features(source)
        return detection_loss(detector, features, source_proposals, annotations)

    def alignment(reversal_strength):
        def loss():
            return uda_loss(detector, detector.extract_features(source),
                            detector.extract_features(target), reversal_strength)
        return loss

    def rotation(mode):
        def loss():
            return rotation_loss(detector, rotated_source, turns[0], rotated_target, turns[1],
                                 mode=mode, top_k=top_k, source_boxes=source_boxes,
                                 target_boxes=target_boxes)
        return loss

    def consistency():
        loss, _ = consistency_loss_one_image(detector, source, policy, seed=seed, sigma=None,
                                             top_k=top_k, targets=targets)
        return loss

    def reversed_sign(name):
        return -1.0 if name.startswith('feature_extractor.') else 1.0

    # A negative strength turns the reversal into the identity, so the plain gradient is checked
    suite = OrderedDict([
        ('detection', (detection, None)),
        ('uda', (alignment(-1.0), None)),
        ('uda_reversed', (alignment(1.0), reversed_sign)),
        ('rotation_PropRot', (rotation('PropRot'), None)),
        ('rotation_ImgRot', (rotation('ImgRot'), None)),
        ('consistency', (consistency, None)),
    ])
    report = OrderedDict()
    for term, (loss_fn, sign) in suite.items():
        report[term] = check_gradients(loss_fn, params, rng, entries_per_param, sign=sign)
    return report
