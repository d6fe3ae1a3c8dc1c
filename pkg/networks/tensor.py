"""This module contains a minimal dense tensor with tape-based reverse-mode differentiation.

Operations executed while a Tape is active are recorded in execution order together with a
closure computing their vector-jacobian product. Calling backward() on a scalar replays the
record once, in reverse, and accumulates gradients into every leaf that requires them.
Operations executed with no active tape only compute values, which is what evaluation uses.
"""
import threading

import numpy as np

DTYPES = {'float64': np.float64, 'float32': np.float32}
_DEFAULT_DTYPE = [np.float64]
_LOG_FLOOR = 1e-300

_local = threading.local()


def set_default_dtype(name):
    """Select the floating precision used for every tensor created afterwards.

    Args:
        name (str): 'float64' or 'float32'.

    Raises:
        KeyError: If the precision name is not supported.
    """
    if name not in DTYPES:
        raise KeyError(f'{name} is not a supported dtype. Available dtypes are: '
                       + ' '.join(DTYPES))
    _DEFAULT_DTYPE[0] = DTYPES[name]


def get_default_dtype():
    return _DEFAULT_DTYPE[0]


def _tape_stack():
    if not hasattr(_local, 'tapes'):
        _local.tapes = []
    return _local.tapes


def active_tape():
    """Return the innermost active Tape of the calling thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of the differentiable operations executed while it is active.

    Usage:
        with Tape():
            loss = ...
        backward(loss)
    """

    def __init__(self):
        self.entries = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        stack = _tape_stack()
        assert stack and stack[-1] is self, 'Tapes must be closed in LIFO order.'
        stack.pop()
        return False

    def __len__(self):
        return len(self.entries)

    def record(self, output, inputs, vjp, op):
        output._tape = self
        self.entries.append((output, inputs, vjp, op))

    def clear(self):
        for output, _, _, _ in self.entries:
            output._tape = None
        self.entries = []


class no_grad:
    """Context manager that suspends recording in the calling thread."""

    def __enter__(self):
        self._saved = list(_tape_stack())
        _tape_stack().clear()
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        _tape_stack().extend(self._saved)
        return False


class Tensor:
    """Dense n-dimensional array participating in the recorded differentiation tape."""

    __array_priority__ = 100  # Make numpy defer to Tensor's reflected operators

    def __init__(self, values, requires_grad=False, dtype=None):
        """Wrap the given values.

        Args:
            values (array_like): Initial values.
            requires_grad (bool): Whether backward() should accumulate a gradient for this tensor.
            dtype (numpy.dtype, optional): Defaults to the process-wide precision.
        """
        self.values = np.array(values, dtype=dtype or get_default_dtype())
        self.requires_grad = requires_grad
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def item(self):
        return float(self.values)

    def numpy(self):
        return self.values

    def detach(self):
        """Return a tensor with the same values that is cut from the tape."""
        return Tensor(self.values, requires_grad=False, dtype=self.values.dtype)

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)

    def __repr__(self):
        return f'Tensor(shape={self.shape}, requires_grad={self.requires_grad})'

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(values, inputs, vjp, op):
    """Wrap op output values and record the op if any input is differentiable."""
    tape = active_tape()
    requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=requires_grad, dtype=values.dtype)
    if requires_grad:
        tape.record(out, inputs, vjp, op)
    return out


def _unbroadcast(grad, shape):
    """Sum grad over the axes that numpy broadcasting expanded to reach grad.shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f'{op}: shapes {a.shape} and {b.shape} are not compatible.')


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast('add', a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result(a.values + b.values, (a, b), vjp, 'add')


def subtract(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast('subtract', a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _result(a.values - b.values, (a, b), vjp, 'subtract')


def multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast('multiply', a, b)

    def vjp(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)
    return _result(a.values * b.values, (a, b), vjp, 'multiply')


def matmul(a, b):
    """Matrix product of a (n, k) and b (k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f'matmul: shapes {a.shape} and {b.shape} are not compatible.')

    def vjp(g):
        return g @ b.values.T, a.values.T @ g
    return _result(a.values @ b.values, (a, b), vjp, 'matmul')


def _conv_windows(x, kernel_size, stride, padding):
    padded = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, (kernel_size, kernel_size), axis=(0, 1))
    return windows[::stride, ::stride]  # (out_h, out_w, c_in, k, k)


def conv2d(x, weight, bias, stride=1, padding=1):
    """2D cross-correlation of a channels-last image.

    Args:
        x (Tensor): Input of shape (height, width, in_channels).
        weight (Tensor): Kernel of shape (k, k, in_channels, out_channels).
        bias (Tensor): Bias of shape (out_channels,).
        stride (int): Spatial stride.
        padding (int): Zero padding added on every spatial side.

    Returns:
        (Tensor): Output of shape (out_height, out_width, out_channels) where
            out = floor((in + 2 * padding - k) / stride) + 1.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    k = weight.shape[0]
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != k or \
            weight.shape[2] != x.shape[2] or bias.shape != (weight.shape[3],):
        raise ValueError(f'conv2d: input {x.shape}, weight {weight.shape} and bias {bias.shape} '
                         f'are not compatible.')
    windows = _conv_windows(x.values, k, stride, padding)
    out_h, out_w = windows.shape[:2]
    # (c_in, k, k, c_out) so it contracts against the window axes
    kernel = weight.values.transpose(2, 0, 1, 3)
    out = np.tensordot(windows, kernel, axes=([2, 3, 4], [0, 1, 2])) + bias.values

    def vjp(g):
        grad_w = np.tensordot(windows, g, axes=([0, 1], [0, 1])).transpose(1, 2, 0, 3)
        grad_b = g.sum(axis=(0, 1))
        height, width = x.shape[:2]
        padded = np.zeros((height + 2 * padding, width + 2 * padding, x.shape[2]),
                          dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                padded[i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                    g @ weight.values[i, j].T
        grad_x = padded[padding:padding + height, padding:padding + width]
        return grad_x, grad_w, grad_b
    return _result(out, (x, weight, bias), vjp, 'conv2d')


def relu(x):
    x = as_tensor(x)
    mask = x.values > 0

    def vjp(g):
        return (g * mask,)
    return _result(x.values * mask, (x,), vjp, 'relu')


def sigmoid(x):
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.values))

    def vjp(g):
        return (g * out * (1.0 - out),)
    return _result(out, (x,), vjp, 'sigmoid')


def softmax(x):
    """Softmax over the last axis."""
    x = as_tensor(x)
    shifted = np.exp(x.values - x.values.max(axis=-1, keepdims=True))
    out = shifted / shifted.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return _result(out, (x,), vjp, 'softmax')


def log(x):
    """Natural logarithm, with inputs floored at a tiny positive value."""
    x = as_tensor(x)
    safe = np.maximum(x.values, _LOG_FLOOR)

    def vjp(g):
        return (g / safe * (x.values > _LOG_FLOOR),)
    return _result(np.log(safe), (x,), vjp, 'log')


def smooth_l1(x):
    """Elementwise Huber loss with unit transition point."""
    x = as_tensor(x)
    magnitude = np.abs(x.values)
    out = np.where(magnitude < 1.0, 0.5 * x.values ** 2, magnitude - 0.5)

    def vjp(g):
        return (g * np.clip(x.values, -1.0, 1.0),)
    return _result(out, (x,), vjp, 'smooth_l1')


def sum(x):
    x = as_tensor(x)

    def vjp(g):
        return (np.broadcast_to(g, x.shape).copy(),)
    return _result(np.asarray(x.values.sum()), (x,), vjp, 'sum')


def mean(x):
    x = as_tensor(x)
    count = x.values.size

    def vjp(g):
        return (np.full(x.shape, g / count, dtype=x.values.dtype),)
    return _result(np.asarray(x.values.mean()), (x,), vjp, 'mean')


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.values.reshape(shape)
    except ValueError:
        raise ValueError(f'reshape: cannot reshape {x.shape} into {shape}.')

    def vjp(g):
        return (g.reshape(x.shape),)
    return _result(out, (x,), vjp, 'reshape')


def take(x, indices):
    """Pick one entry per row: out[r] = x[r, indices[r]]."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=int)
    if x.ndim != 2 or indices.shape != (x.shape[0],):
        raise ValueError(f'take: shapes {x.shape} and {indices.shape} are not compatible.')
    rows = np.arange(x.shape[0])

    def vjp(g):
        grad = np.zeros_like(x.values)
        grad[rows, indices] = g
        return (grad,)
    return _result(x.values[rows, indices], (x,), vjp, 'take')


def rows(x, indices):
    """Select rows of a 2D tensor."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=int)

    def vjp(g):
        grad = np.zeros_like(x.values)
        np.add.at(grad, indices, g)
        return (grad,)
    return _result(x.values[indices], (x,), vjp, 'rows')


def region_mean(feature_map, index_sets):
    """Mean-pool a (height, width, channels) map over sets of flat cell indices.

    Args:
        feature_map (Tensor): Feature map of shape (height, width, channels).
        index_sets (list): One non-empty array of raster-order cell indices per region.

    Returns:
        (Tensor): Pooled features of shape (len(index_sets), channels).
    """
    feature_map = as_tensor(feature_map)
    height, width, channels = feature_map.shape
    flat = feature_map.values.reshape(height * width, channels)
    index_sets = [np.asarray(idx, dtype=int) for idx in index_sets]
    if any(idx.size == 0 for idx in index_sets):
        raise ValueError('region_mean: every region must contain at least one cell.')
    out = np.stack([flat[idx].mean(axis=0) for idx in index_sets]) if index_sets else \
        np.zeros((0, channels), dtype=flat.dtype)

    def vjp(g):
        grad = np.zeros_like(flat)
        for r, idx in enumerate(index_sets):
            grad[idx] += g[r] / idx.size
        return (grad.reshape(feature_map.shape),)
    return _result(out, (feature_map,), vjp, 'region_mean')


def global_mean(feature_map):
    """Mean-pool a (height, width, channels) map over all cells, giving shape (1, channels)."""
    feature_map = as_tensor(feature_map)
    height, width, _ = feature_map.shape
    return region_mean(feature_map, [np.arange(height * width)])


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise ValueError('concat: shapes ' + ', '.join(str(t.shape) for t in tensors)
                         + ' are not compatible.')
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _result(out, tuple(tensors), vjp, 'concat')


def grad_reverse(x, beta=1.0):
    """Identity in the forward pass; multiplies the incoming gradient by -beta backwards."""
    x = as_tensor(x)

    def vjp(g):
        return (-beta * g,)
    return _result(x.values.copy(), (x,), vjp, 'grad_reverse')


def one_hot(labels, n_classes):
    """Non-differentiable one-hot encoding of integer labels."""
    labels = np.asarray(labels, dtype=int)
    return Tensor(np.eye(n_classes)[labels])


def backward(loss):
    """Accumulate d(loss)/d(leaf) into the .grad of every leaf that requires it.

    The tape that recorded loss is replayed once, in reverse execution order, and cleared.

    Args:
        loss (Tensor): Scalar tensor produced under an active Tape.

    Raises:
        ValueError: If loss is not a scalar or was not recorded on a tape.
    """
    if loss.shape != ():
        raise ValueError(f'backward: loss must be a scalar, got shape {loss.shape}.')
    tape = loss._tape
    if tape is None or not tape.entries:
        raise ValueError('backward: loss was not recorded on a tape.')
    grads = {id(loss): np.ones_like(loss.values)}
    for output, inputs, vjp, _ in reversed(tape.entries):
        g = grads.pop(id(output), None)
        if g is None:
            continue
        for inp, grad in zip(inputs, vjp(g)):
            if not inp.requires_grad:
                continue
            if inp._tape is None:  # Leaf
                inp.grad = grad.copy() if inp.grad is None else inp.grad + grad
            elif id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + grad
            else:
                grads[id(inp)] = grad
    tape.clear()
