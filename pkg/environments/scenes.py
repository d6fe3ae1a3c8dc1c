"""Deterministic synthetic two-domain scenes: labeled clean source scenes and foggy target scenes.

A source scene and a target scene generated from the same seed share their geometry (and hence
their annotations); the target scene is additionally rendered through a fog model.
"""
import enum
from collections import namedtuple

import cv2
import numpy as np

from utilities.geometry import BoundingBox, iou

CLASS_NAMES = ('disk', 'square', 'triangle')
IMAGE_SIZE = 64
MIN_SHAPE_SIZE, MAX_SHAPE_SIZE = 8, 24
MAX_GT_IOU = 0.3
MAX_PLACEMENT_ATTEMPTS = 100


class Domain(str, enum.Enum):
    SOURCE = 'source'
    TARGET = 'target'


Annotation = namedtuple('Annotation', ['box', 'class_id'])
Scene = namedtuple('Scene', ['image', 'annotations', 'domain', 'id'])


class SceneStyle:
    """Rendering constants of the synthetic benchmark."""
    background_colors = {
        Domain.SOURCE: np.array([0.45, 0.42, 0.38]),
        Domain.TARGET: np.array([0.40, 0.42, 0.46]),
    }
    background_noise = 0.08
    background_noise_cells = 8
    class_colors = np.array([
        [0.85, 0.20, 0.20],  # disk
        [0.20, 0.75, 0.25],  # square
        [0.20, 0.30, 0.85],  # triangle
    ])
    color_jitter = 0.1
    # Terraces lit from above: every band fades from bright to dark downwards, then the next
    # band starts bright again. Gives each region an up direction.
    shading_amplitude = 0.3
    shading_period = 8
    fog_gray = 0.8
    fog_alpha_range = (0.4, 0.7)
    fog_contrast = 0.7


def _draw_shape(canvas, class_id, x, y, size, color):
    """Fill the shape inscribed in the pixel square [x, x + size) x [y, y + size)."""
    shift = 4
    scale = 1 << shift

    def fixed(v):
        return int(round(v * scale))
    color = tuple(float(c) for c in color)
    if CLASS_NAMES[class_id] == 'square':
        cv2.rectangle(canvas, (x, y), (x + size - 1, y + size - 1), color, thickness=-1)
    elif CLASS_NAMES[class_id] == 'disk':
        # Pixel centers sit at i + 0.5
        center = (fixed(x + (size - 1) / 2), fixed(y + (size - 1) / 2))
        cv2.circle(canvas, center, fixed((size - 1) / 2), color, thickness=-1, shift=shift)
    else:
        points = np.array([[fixed(x), fixed(y + size - 1)],
                           [fixed(x + size - 1), fixed(y + size - 1)],
                           [fixed(x + (size - 1) / 2), fixed(y)]], dtype=np.int32)
        cv2.fillPoly(canvas, [points], color, shift=shift)
    return canvas


def _place_shapes(rng, n_shapes, image_size):
    """Rejection-sample n_shapes boxes with pairwise IoU below MAX_GT_IOU.

    Returns:
        (list): List of (class_id, x, y, size), or None if a shape could not be placed within
            MAX_PLACEMENT_ATTEMPTS attempts.
    """
    placed = []
    for _ in range(n_shapes):
        class_id = int(rng.integers(len(CLASS_NAMES)))
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            size = int(rng.integers(MIN_SHAPE_SIZE, MAX_SHAPE_SIZE + 1))
            x = int(rng.integers(0, image_size - size + 1))
            y = int(rng.integers(0, image_size - size + 1))
            box = BoundingBox(x, y, x + size, y + size)
            if all(iou(box, BoundingBox(px, py, px + ps, py + ps)) < MAX_GT_IOU
                   for _, px, py, ps in placed):
                placed.append((class_id, x, y, size))
                break
        else:
            return None
    return placed


def _directional_shading(image_size, phase, style):
    """(image_size, 1, 1) sawtooth brightness offset along the vertical axis.

    Each band of shading_period rows goes from +amplitude / 2 at its top row down to just above
    -amplitude / 2, so a quarter turn of the image changes the direction of both the ramps and
    the band edges.
    """
    rows = (np.arange(image_size) + phase) % style.shading_period
    profile = style.shading_amplitude * (0.5 - rows / style.shading_period)
    return profile[:, None, None]


def _apply_fog(image, rng, style):
    alpha = rng.uniform(*style.fog_alpha_range)
    fogged = (1.0 - alpha) * image + alpha * style.fog_gray
    fogged = cv2.blur(fogged, (3, 3))
    fogged = (fogged - 0.5) * style.fog_contrast + 0.5
    return fogged


def generate_scene(seed, domain, image_size=IMAGE_SIZE, style=SceneStyle):
    """Render the scene determined by seed in the given domain.

    Args:
        seed (int): Scene seed. The same seed gives the same annotations in both domains.
        domain (Domain or str): 'source' or 'target'.
        image_size (int): Side of the square canvas in pixels.
        style (SceneStyle): Rendering constants.

    Returns:
        (Scene): Image of shape (image_size, image_size, 3) in [0, 1] and its annotations.
    """
    domain = Domain(domain)
    rng = np.random.default_rng(seed)

    # Geometry and colours are drawn before anything domain-specific
    n_shapes = int(rng.integers(1, 4))
    placed = None
    while placed is None:
        placed = _place_shapes(rng, n_shapes, image_size)
        n_shapes = max(1, n_shapes - 1)
    colors = [style.class_colors[class_id]
              + rng.uniform(-style.color_jitter, style.color_jitter, size=3)
              for class_id, _, _, _ in placed]
    cells = style.background_noise_cells
    noise = rng.uniform(-1.0, 1.0, size=(cells, cells, 3)) * style.background_noise
    phase = int(rng.integers(style.shading_period))

    background = style.background_colors[domain] + cv2.resize(
        noise, (image_size, image_size), interpolation=cv2.INTER_LINEAR)
    background = background + _directional_shading(image_size, phase, style)
    image = np.ascontiguousarray(background, dtype=np.float64)
    annotations = []
    for (class_id, x, y, size), color in zip(placed, colors):
        _draw_shape(image, class_id, x, y, size, np.clip(color, 0.0, 1.0))
        annotations.append(Annotation(BoundingBox(x, y, x + size, y + size), class_id))

    if domain == Domain.TARGET:
        image = _apply_fog(image, np.random.default_rng([seed, 1]), style)
    return Scene(image=np.clip(image, 0.0, 1.0), annotations=annotations, domain=domain, id=seed)
