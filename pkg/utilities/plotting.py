"""Loss and mAP curves from a metrics CSV, and detection overlays on test images."""
import csv
import os

import cv2
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from environments.datasets import SceneDataset
from utilities.geometry import BoundingBox

LOSS_COLUMNS = ('l_det', 'l_uda', 'l_rp', 'l_cl', 'total')
CLASS_COLORS = [(0.9, 0.1, 0.1), (0.1, 0.8, 0.1), (0.1, 0.2, 0.9)]
GT_COLOR = (1.0, 1.0, 1.0)


def read_metrics(path):
    """Return the metrics CSV as a dict of float arrays (NaN where a cell is empty)."""
    if not os.path.isfile(path):
        raise IOError(f'Metrics file not found: {path}')
    with open(path, 'r', newline='') as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return {}
    return {key: np.array([float(r[key]) if r[key] != '' else np.nan for r in rows])
            for key in rows[0]}


def plot_curves(metrics_path, output_dir):
    """Write loss_curves.png and map_curve.png next to each other in output_dir.

    Returns:
        (list): Paths of the written images.
    """
    metrics = read_metrics(metrics_path)
    os.makedirs(output_dir, exist_ok=True)
    written = []

    plt.figure(figsize=(8, 5))
    if metrics:
        for column in LOSS_COLUMNS:
            plt.plot(metrics['step'], metrics[column], lw=1, label=column)
    plt.xlabel("Step")
    plt.ylabel("Loss")
    plt.title("Training losses")
    plt.grid(True)
    plt.legend()
    path = os.path.join(output_dir, 'loss_curves.png')
    plt.savefig(path, dpi=100)
    plt.close()
    written.append(path)

    plt.figure(figsize=(8, 5))
    if metrics:
        evaluated = ~np.isnan(metrics['target_map'])
        plt.plot(metrics['step'][evaluated], 100 * metrics['target_map'][evaluated], 'o-')
    plt.xlabel("Step")
    plt.ylabel("Target mAP (%)")
    plt.ylim(bottom=0, top=100)
    plt.title("Target-test mAP")
    plt.grid(True)
    path = os.path.join(output_dir, 'map_curve.png')
    plt.savefig(path, dpi=100)
    plt.close()
    written.append(path)
    return written


def _draw_box(canvas, box, color, scale):
    p0 = (int(round(box.x_min * scale)), int(round(box.y_min * scale)))
    p1 = (int(round(box.x_max * scale)) - 1, int(round(box.y_max * scale)) - 1)
    cv2.rectangle(canvas, p0, p1, color, thickness=1)


def draw_detections(image, detections, annotations=(), scale=4):
    """Upscaled copy of image with ground-truth boxes in white and detections by class colour."""
    canvas = cv2.resize(np.ascontiguousarray(image, dtype=np.float32), None, fx=scale, fy=scale,
                        interpolation=cv2.INTER_NEAREST)
    for annotation in annotations:
        _draw_box(canvas, annotation.box, GT_COLOR, scale)
    for detection in detections:
        _draw_box(canvas, detection['box'], CLASS_COLORS[detection['class_id']], scale)
    return canvas


def plot_detections(predictions, index_path, output_path, n_images=8, score_threshold=0.5):
    """Grid of the first n_images test scenes with their predictions drawn on top."""
    dataset = SceneDataset(index_path)
    by_image = {}
    for prediction in predictions:
        if prediction['confidence'] >= score_threshold:
            prediction = dict(prediction, box=BoundingBox.from_list(prediction['box']))
            by_image.setdefault(prediction['image_id'], []).append(prediction)
    n_images = min(n_images, len(dataset))
    n_cols = min(4, n_images)
    n_rows = int(np.ceil(n_images / n_cols))
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(3 * n_cols, 3 * n_rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis('off')
    for i in range(n_images):
        scene = dataset[i]
        canvas = draw_detections(scene.image, by_image.get(scene.id, []), scene.annotations)
        ax = axes.ravel()[i]
        ax.imshow(np.clip(canvas, 0, 1))
        ax.set_title(f'image {scene.id}')
    plt.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(output_path)), exist_ok=True)
    plt.savefig(output_path, dpi=100)
    plt.close(fig)
    return output_path
