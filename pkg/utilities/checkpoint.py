"""Binary parameter checkpoints.

Layout (all integers little-endian uint32):
    b'RPCLCKPT', format version, parameter count,
    then per parameter: name length, UTF-8 name, ndim, dims..., raw little-endian float64 values.
"""
import os
import struct

import numpy as np

MAGIC = b'RPCLCKPT'
FORMAT_VERSION = 1


def _pack_uint(value):
    return struct.pack('<I', value)


def save_parameters(path, named_arrays):
    """Write a {name: numpy.ndarray} mapping to path, in the mapping's order."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(_pack_uint(FORMAT_VERSION))
        f.write(_pack_uint(len(named_arrays)))
        for name, values in named_arrays.items():
            encoded = name.encode('utf-8')
            values = np.ascontiguousarray(values, dtype='<f8')
            f.write(_pack_uint(len(encoded)))
            f.write(encoded)
            f.write(_pack_uint(values.ndim))
            for dim in values.shape:
                f.write(_pack_uint(dim))
            f.write(values.tobytes())


def load_parameters(path):
    """Read a checkpoint written by save_parameters.

    Returns:
        (dict): Mapping from parameter name to float64 numpy.ndarray, in file order.

    Raises:
        IOError: If the file is missing, truncated or not a checkpoint of a supported version.
    """
    with open(path, 'rb') as f:
        data = f.read()
    if data[:len(MAGIC)] != MAGIC:
        raise IOError(f'{path} is not a parameter checkpoint.')
    offset = len(MAGIC)

    def read_uint():
        nonlocal offset
        if offset + 4 > len(data):
            raise IOError(f'Checkpoint {path} is truncated.')
        value, = struct.unpack_from('<I', data, offset)
        offset += 4
        return value

    version = read_uint()
    if version != FORMAT_VERSION:
        raise IOError(f'Checkpoint {path} has format version {version}, '
                      f'expected {FORMAT_VERSION}.')
    arrays = {}
    for _ in range(read_uint()):
        name_length = read_uint()
        name = data[offset:offset + name_length].decode('utf-8')
        offset += name_length
        shape = tuple(read_uint() for _ in range(read_uint()))
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + n_bytes > len(data):
            raise IOError(f'Checkpoint {path} is truncated.')
        arrays[name] = np.frombuffer(data, dtype='<f8', count=n_bytes // 8,
                                     offset=offset).reshape(shape).astype(np.float64)
        offset += n_bytes
    return arrays
