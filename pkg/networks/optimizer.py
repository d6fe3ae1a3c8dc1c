import numpy as np


class SgdState:
    """Learning rate, momentum coefficient and one velocity buffer per parameter."""

    def __init__(self, learning_rate, momentum=0.0):
        """Instantiate the optimizer state.

        Args:
            learning_rate (float): Step size.
            momentum (float): Momentum coefficient mu in v <- mu * v + g.
        """
        if learning_rate < 0 or momentum < 0:
            raise ValueError('learning_rate and momentum must be non-negative.')
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocities = {}


def sgd_step(params, state):
    """Apply v <- mu * v + g; p <- p - lr * v to every parameter, then zero the gradients.

    Parameters whose gradient was never populated are treated as having a zero gradient.

    Args:
        params (dict): Mapping from parameter name to networks.tensor.Tensor.
        state (SgdState): Optimizer state, updated in place.

    Returns:
        (dict): The same params mapping, with updated values.
    """
    for name, param in params.items():
        grad = param.grad if param.grad is not None else np.zeros_like(param.values)
        velocity = state.velocities.get(name)
        if velocity is None:
            velocity = np.zeros_like(param.values)
        velocity = state.momentum * velocity + grad
        state.velocities[name] = velocity
        param.values = param.values - state.learning_rate * velocity
        param.zero_grad()
    return params
