"""Image buffers, quarter-turn rotation and the position-preserving augmentation policy.

Images are channels-last numpy arrays of shape (height, width, 3) with intensities in [0, 1].
Every augmentation op is pointwise: the output at (i, j) depends only on the input at (i, j), the
op parameters and, for the noise op, the seeded noise value drawn for (i, j).
"""
import abc

import cv2
import numpy as np

from utilities.geometry import QuarterTurn


def as_image(array):
    """Validate an (H, W, 3) array and return it as a float image clamped to [0, 1]."""
    image = np.asarray(array, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f'Expected an image of shape (H, W, 3), got {image.shape}.')
    return np.clip(image, 0.0, 1.0)


def rotate_image(image, turn):
    """Rotate counterclockwise by an exact index permutation.

    Consistent with geometry.rotate_box: pixel (x, y) -> (y, W - x) for 90 degrees.
    """
    return np.ascontiguousarray(np.rot90(image, k=QuarterTurn(turn).index, axes=(0, 1)))


def read_png(path):
    """Read an 8-bit RGB PNG as a float image."""
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise IOError(f'Could not read image {path}.')
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.


def write_png(path, image):
    """Write a float image as an 8-bit RGB PNG, quantizing with round(v * 255)."""
    quantized = np.round(np.clip(image, 0.0, 1.0) * 255.).astype(np.uint8)
    if not cv2.imwrite(str(path), cv2.cvtColor(quantized, cv2.COLOR_RGB2BGR)):
        raise IOError(f'Could not write image {path}.')


class PointwiseAugmentation(abc.ABC):
    """An augmentation whose strength u in [0, 1] maps to an op parameter; u = 0 is the identity."""

    def __init__(self, max_value):
        self.max_value = max_value

    @abc.abstractmethod
    def parameters(self, strength, rng, image_shape):
        """Draw the op parameters for the given strength."""

    @abc.abstractmethod
    def apply(self, image, params):
        """Apply the op with the given parameters."""

    def __call__(self, image, strength, rng):
        return np.clip(self.apply(image, self.parameters(strength, rng, image.shape)), 0.0, 1.0)

    def __repr__(self):
        return f'{type(self).__name__}[{self.max_value}]'


def _signed(strength, max_value, rng):
    return strength * max_value * (1.0 if rng.random() < 0.5 else -1.0)


class Brightness(PointwiseAugmentation):
    def __init__(self, max_value=0.3):
        super().__init__(max_value)

    def parameters(self, strength, rng, image_shape):
        return _signed(strength, self.max_value, rng)

    def apply(self, image, shift):
        return image + shift


class Contrast(PointwiseAugmentation):
    """Scale intensities about 0.5."""

    def __init__(self, max_value=0.5):
        super().__init__(max_value)

    def parameters(self, strength, rng, image_shape):
        return 1.0 + _signed(strength, self.max_value, rng)

    def apply(self, image, factor):
        return image * factor + 0.5 * (1.0 - factor)


class Color(PointwiseAugmentation):
    """Scale each channel independently."""

    def __init__(self, max_value=0.4):
        super().__init__(max_value)

    def parameters(self, strength, rng, image_shape):
        return 1.0 + strength * self.max_value * rng.uniform(-1.0, 1.0, size=3)

    def apply(self, image, scales):
        return image * scales


class Solarize(PointwiseAugmentation):
    """Invert every value strictly above the threshold."""

    def __init__(self, max_value=0.5):
        super().__init__(max_value)

    def parameters(self, strength, rng, image_shape):
        return 1.0 - strength * self.max_value

    def apply(self, image, threshold):
        return np.where(image > threshold, 1.0 - image, image)


class Posterize(PointwiseAugmentation):
    """Quantize to fewer bits per channel; 8 bits leaves the image untouched."""

    def __init__(self, max_value=4):
        super().__init__(max_value)

    def parameters(self, strength, rng, image_shape):
        return 8 - int(round(strength * self.max_value))

    def apply(self, image, bits):
        if bits >= 8:
            return image
        levels = 2 ** bits
        return np.floor(image * levels).clip(0, levels - 1) / (levels - 1)


class Gamma(PointwiseAugmentation):
    def __init__(self, max_value=0.5):
        super().__init__(max_value)

    def parameters(self, strength, rng, image_shape):
        return float(np.exp(_signed(strength, self.max_value, rng)))

    def apply(self, image, exponent):
        return image ** exponent


class GaussianNoise(PointwiseAugmentation):
    """Additive noise; the value at (i, j) depends only on the seed and the position."""

    def __init__(self, max_value=0.05):
        super().__init__(max_value)

    def parameters(self, strength, rng, image_shape):
        return rng.standard_normal(image_shape) * (strength * self.max_value)

    def apply(self, image, noise):
        return image + noise


def augmentation_pool(max_values=None):
    """Return the op pool, optionally overriding each op's maximum parameter.

    Args:
        max_values (dict, optional): Mapping from op name (e.g. 'brightness') to max value.
    """
    max_values = max_values or {}
    ops = {
        'brightness': Brightness, 'contrast': Contrast, 'color': Color, 'solarize': Solarize,
        'posterize': Posterize, 'gamma': Gamma, 'noise': GaussianNoise,
    }
    unknown = set(max_values) - set(ops)
    if unknown:
        raise KeyError(f'Unknown augmentation ops: {sorted(unknown)}. Available ops are: '
                       + ' '.join(ops))
    return [cls(max_values[name]) if name in max_values else cls()
            for name, cls in ops.items()]


class AugmentationPolicy:
    """RandAugment-style policy restricted to pointwise ops."""

    def __init__(self, op_count=2, magnitude=1.0, max_values=None):
        """Instantiate the policy.

        Args:
            op_count (int): Number N of ops sampled (with replacement) per augmentation.
            magnitude (float): Upper bound in [0, 1] of the per-op strength u ~ U[0, magnitude].
            max_values (dict, optional): Per-op parameter maxima, see augmentation_pool().
        """
        if op_count < 1:
            raise ValueError(f'op_count must be positive, got {op_count}.')
        if not 0.0 <= magnitude <= 1.0:
            raise ValueError(f'magnitude must be in [0, 1], got {magnitude}.')
        self.op_count = op_count
        self.magnitude = magnitude
        self.pool = augmentation_pool(max_values)

    @classmethod
    def from_params(cls, params):
        return cls(op_count=params['op_count'], magnitude=params['magnitude'],
                   max_values=params.get('max_values'))


def augment(image, policy, seed):
    """Apply policy.op_count ops sampled uniformly with replacement, each with a uniform strength.

    Deterministic given (image, policy, seed); output has the input's dimensions and is clamped to
    [0, 1] after every op.
    """
    rng = np.random.default_rng(seed)
    out = np.asarray(image, dtype=np.float64)
    for _ in range(policy.op_count):
        op = policy.pool[rng.integers(len(policy.pool))]
        strength = rng.uniform(0.0, policy.magnitude)
        out = op(out, strength, rng)
    return out
