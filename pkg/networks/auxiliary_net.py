"""Image-level heads on globally mean-pooled features: the image rotation head used by the ImgRot
variant and the gradient-reversed domain classifier behind the alignment loss.
"""
from networks import layers
from networks import tensor as T


class ImageRotationHead(layers.Module):
    def __init__(self, in_features=16, n_angles=4):
        self.rotation = layers.Dense(in_features, n_angles)

    def __call__(self, features):
        return self.rotation(T.global_mean(features))


class DomainClassifier(layers.Module):
    """Gradient reversal, then a two-layer classifier predicting source (0) or target (1)."""

    def __init__(self, in_features=16, hidden=8):
        self.hidden = layers.Dense(in_features, hidden)
        self.out = layers.Dense(hidden, 2)

    def __call__(self, features, reversal_strength=1.0):
        pooled = T.grad_reverse(T.global_mean(features), reversal_strength)
        return self.out(T.relu(self.hidden(pooled)))
