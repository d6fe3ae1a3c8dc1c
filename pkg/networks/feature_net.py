"""This module contains the shared feature extractor of the detector. Every head (objectness,
proposal heads, rotation and domain classifiers) reads its features, so the alignment pressure of
the auxiliary tasks flows into the same weights.
"""
from networks import layers
from networks import tensor as T


class FeatureExtractor(layers.Module):
    """Two strided 3x3 convolutions with ReLU: (H, W, 3) -> (H / 4, W / 4, out_channels)."""

    DEFAULT_PARAMS = {
        'n_filters': [8, 16],
        'strides': [2, 2],
    }

    def __init__(self, in_channels=3, n_filters=None, strides=None):
        """Instantiate the convolutional layers.

        Args:
            in_channels (int): Channels of the input image.
            n_filters (list): Output channels of each convolution.
            strides (list): Stride of each convolution.
        """
        if n_filters is None and strides is None:
            n_filters = FeatureExtractor.DEFAULT_PARAMS['n_filters']
            strides = FeatureExtractor.DEFAULT_PARAMS['strides']
        elif n_filters is None or strides is None:
            raise ValueError('Args n_filters and strides can only be either both None, or both '
                             'defined by the user.')
        assert len(n_filters) == 2 and len(strides) == 2, \
            'n_filters and strides must hold one value for each of the two convolutions.'
        self.conv1 = layers.Conv2d(in_channels, n_filters[0], stride=strides[0])
        self.conv2 = layers.Conv2d(n_filters[0], n_filters[1], stride=strides[1])
        self.out_channels = n_filters[1]
        self.total_stride = strides[0] * strides[1]

    def __call__(self, image):
        """Compute the feature map of a channels-last image.

        Args:
            image (Tensor or numpy.ndarray): (height, width, channels) input.

        Returns:
            (Tensor): (height / stride, width / stride, out_channels) feature map.
        """
        height, width = image.shape[:2]
        if height % self.total_stride or width % self.total_stride:
            raise ValueError(f'Image dimensions {height}x{width} must be divisible by '
                             f'{self.total_stride}.')
        x = T.relu(self.conv1(T.as_tensor(image)))
        return T.relu(self.conv2(x))
