"""PASCAL-VOC style evaluation: all-points average precision at IoU 0.5, mAP over classes, the
predictions file and rotation-prediction accuracy.
"""
import concurrent.futures
import csv
import json
import os
import warnings
from collections import namedtuple

import numpy as np

from networks import tensor as T
from utilities.detection_result import detection_to_dict
from utilities.geometry import BoundingBox, QuarterTurn, iou
from utilities.imaging import rotate_image

IOU_THRESHOLD = 0.5
PROTOCOL = 'all-points AP, IoU 0.5'

MatchResult = namedtuple('MatchResult', ['true_positives', 'n_ground_truth'])
EvaluationResult = namedtuple('EvaluationResult', ['class_names', 'average_precisions', 'mAP'])


def rank_detections(detections):
    """Sort by descending confidence, then ascending image id, then input order."""
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i]['confidence'], detections[i]['image_id'], i))
    return [detections[i] for i in order]


def match(detections, ground_truth, iou_threshold=IOU_THRESHOLD):
    """Greedy highest-confidence-first matching of one class.

    Each detection is compared with the ground truth of its image; it is a true positive when
    its best overlap reaches iou_threshold and that ground-truth box was not matched before.

    Args:
        detections (list): Ranked {image_id, box, confidence} dicts of a single class.
        ground_truth (dict): image_id -> list of BoundingBox of the class.

    Returns:
        (MatchResult): Per-detection true-positive flags and the number of ground-truth boxes.
    """
    used = {image_id: np.zeros(len(boxes), dtype=bool)
            for image_id, boxes in ground_truth.items()}
    flags = np.zeros(len(detections), dtype=bool)
    for d, detection in enumerate(detections):
        boxes = ground_truth.get(detection['image_id'], [])
        if not boxes:
            continue
        box = BoundingBox.from_list(detection['box'])
        overlaps = [iou(box, gt) for gt in boxes]
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_threshold and not used[detection['image_id']][best]:
            used[detection['image_id']][best] = True
            flags[d] = True
    n_ground_truth = sum(len(boxes) for boxes in ground_truth.values())
    return MatchResult(flags, n_ground_truth)


def average_precision(true_positives, n_ground_truth):
    """Area under the running-max precision envelope of a ranked list.

    Args:
        true_positives (array_like): Ranked per-detection true-positive flags.
        n_ground_truth (int): Number of ground-truth instances (must be positive).

    Returns:
        (float): Average precision in [0, 1].
    """
    if n_ground_truth <= 0:
        raise ValueError('Average precision is undefined without ground-truth instances.')
    tp = np.cumsum(np.asarray(true_positives, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(true_positives, dtype=np.float64))
    recall = np.concatenate([[0.], tp / n_ground_truth, [1.]])
    precision = np.concatenate([[0.], tp / np.maximum(tp + fp, np.finfo(np.float64).eps), [0.]])
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    changes = np.flatnonzero(recall[1:] != recall[:-1])
    return float(np.sum((recall[changes + 1] - recall[changes]) * precision[changes + 1]))


def _ground_truth_by_class(entries, n_classes):
    per_class = [{} for _ in range(n_classes)]
    for entry in entries:
        for c in range(n_classes):
            per_class[c][entry['id']] = []
        for annotation in entry['annotations']:
            per_class[annotation['class_id']][entry['id']].append(
                BoundingBox.from_list(annotation['box']))
    return per_class


def mean_average_precision(predictions, entries, class_names):
    """Per-class AP and their unweighted mean.

    Classes without ground-truth instances have an undefined AP: they are reported as None and
    left out of the mean, with a warning.

    Args:
        predictions (list): {image_id, class_id, box, confidence} dicts.
        entries (list): Ground-truth entries of a dataset index.
        class_names (list): Name of every class id.

    Returns:
        (EvaluationResult): Class names, per-class AP (float or None) and mAP.

    Raises:
        ValueError: If a prediction refers to an unknown class or image.
    """
    n_classes = len(class_names)
    image_ids = {entry['id'] for entry in entries}
    per_class_detections = [[] for _ in range(n_classes)]
    for prediction in predictions:
        class_id = prediction['class_id']
        if not isinstance(class_id, int) or not 0 <= class_id < n_classes:
            raise ValueError(f'Unknown class id {class_id!r} in predictions. '
                             f'Expected 0..{n_classes - 1}.')
        if prediction['image_id'] not in image_ids:
            raise ValueError(f'Prediction for unknown image id {prediction["image_id"]!r}.')
        per_class_detections[class_id].append(prediction)

    ground_truth = _ground_truth_by_class(entries, n_classes)
    average_precisions = []
    for c in range(n_classes):
        result = match(rank_detections(per_class_detections[c]), ground_truth[c])
        if result.n_ground_truth == 0:
            warnings.warn(f'Class {class_names[c]} has no ground-truth instances; '
                          f'it is excluded from mAP.')
            average_precisions.append(None)
        else:
            average_precisions.append(average_precision(result.true_positives,
                                                         result.n_ground_truth))
    defined = [ap for ap in average_precisions if ap is not None]
    mean_ap = float(np.mean(defined)) if defined else 0.0
    return EvaluationResult(list(class_names), average_precisions, mean_ap)


def write_results_csv(path, result):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['class', 'AP'])
        for name, ap in zip(result.class_names, result.average_precisions):
            writer.writerow([name, '' if ap is None else repr(ap)])
        writer.writerow(['mAP', repr(result.mAP)])


def format_table(result):
    """Plain-text table with one row per class and a final mAP row, in percent."""
    width = max(len(name) for name in result.class_names + ['mAP'])
    lines = [f'# {PROTOCOL}']
    for name, ap in zip(result.class_names, result.average_precisions):
        value = 'n/a' if ap is None else '{:6.2f}'.format(100 * ap)
        lines.append(f'{name:<{width}}  {value}')
    lines.append('-' * (width + 8))
    lines.append(f'{"mAP":<{width}}  {100 * result.mAP:6.2f}')
    return '\n'.join(lines)


def write_predictions(path, predictions):
    """Write (image_id, Detection) pairs as JSON lines."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        for image_id, detection in predictions:
            f.write(json.dumps(detection_to_dict(detection, image_id), sort_keys=True) + '\n')


def read_predictions(path):
    if not os.path.isfile(path):
        raise IOError(f'Predictions file not found: {path}')
    predictions = []
    with open(path, 'r') as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                prediction = json.loads(line)
                for key in ('image_id', 'class_id', 'box', 'confidence'):
                    prediction[key]
            except (ValueError, KeyError) as e:
                raise ValueError(f'{path}:{line_number} is not a valid prediction: {e}') from e
            predictions.append(prediction)
    return predictions


def predict_dataset(detector, dataset, score_threshold=0.05, nms_iou=0.5, workers=1):
    """Run detect() over every scene of a dataset.

    Images are processed by a pool of worker threads sharing the read-only parameters.

    Returns:
        (list): (image_id, Detection) pairs in dataset order.
    """
    def _detect(i):
        scene = dataset[i]
        return [(scene.id, d) for d in detector.detect(scene.image, score_threshold, nms_iou)]

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        per_image = list(executor.map(_detect, range(len(dataset))))
    return [pair for pairs in per_image for pair in pairs]


def evaluate_detector(detector, dataset, class_names, score_threshold=0.05, nms_iou=0.5,
                      workers=1):
    """Target-test mAP of a detector, as used during training."""
    predictions = predict_dataset(detector, dataset, score_threshold, nms_iou, workers)
    as_dicts = [detection_to_dict(d, image_id) for image_id, d in predictions]
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        return mean_average_precision(as_dicts, dataset.entries, class_names)


def rotation_accuracy(detector, images, mode='PropRot', seed=0, top_k=None):
    """Fraction of randomly rotated images whose quarter turn is predicted correctly.

    PropRot predicts from the mean of the per-proposal angle probabilities.
    """
    rng = np.random.default_rng(seed)
    correct = 0
    for image in images:
        turn = QuarterTurn.from_index(int(rng.integers(4)))
        rotated = rotate_image(image, turn)
        with T.no_grad():
            features = detector.extract_features(rotated)
            if mode == 'ImgRot':
                probs = detector.predict_rotation_image(features).values
            else:
                probs = detector.predict_rotation(detector.propose(features, top_k)).values
        correct += int(np.argmax(probs.mean(axis=0)) == turn.index)
    return correct / len(images) if len(images) else 0.0
