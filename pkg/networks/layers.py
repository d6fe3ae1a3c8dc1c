"""Parameter-holding layers built on networks.tensor, mirroring the small subset of torch.nn the
detector needs.
"""
import numpy as np

from networks import tensor as T


class Module:
    """Base class that discovers parameters and sub-modules stored as attributes."""

    def named_parameters(self, prefix=''):
        """Yield (dotted_name, Tensor) pairs in attribute definition order."""
        for name, value in vars(self).items():
            if isinstance(value, T.Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + '.')

    def parameters(self):
        return dict(self.named_parameters())

    def initialize(self, rng, scale=1.0):
        """Draw weights from a He-normal distribution multiplied by scale; zero all biases.

        Args:
            rng (numpy.random.Generator): Source of randomness.
            scale (float): Multiplier of the weight standard deviation (0 gives an all-zero model).
        """
        for name, param in self.named_parameters():
            if name.endswith('bias'):
                param.values = np.zeros_like(param.values)
            else:
                fan_in = int(np.prod(param.shape[:-1]))
                std = scale * np.sqrt(2.0 / fan_in)
                param.values = (rng.standard_normal(param.shape) * std).astype(param.values.dtype)
        return self


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=1):
        self.stride = stride
        self.padding = padding
        self.weight = T.Tensor(np.zeros((kernel_size, kernel_size, in_channels, out_channels)),
                               requires_grad=True)
        self.bias = T.Tensor(np.zeros(out_channels), requires_grad=True)

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Dense(Module):
    """Affine map applied to the rows of a (n, in_features) tensor."""

    def __init__(self, in_features, out_features):
        self.weight = T.Tensor(np.zeros((in_features, out_features)), requires_grad=True)
        self.bias = T.Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x):
        return T.matmul(x, self.weight) + self.bias
