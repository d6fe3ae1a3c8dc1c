import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from networks import tensor as T
from utilities.gradient_check import (TOLERANCE, check_gradients, gradient_suite,
                                      relative_error)


def test_relative_error():
    assert relative_error(1.0, 1.0) == 0.0
    assert np.isclose(relative_error(2.0, 1.0), 0.5)
    # Below the floor the absolute difference is used
    assert relative_error(1e-9, -1e-9) == pytest.approx(2e-9)


@pytest.mark.parametrize('seed', [0, 1])
def test_every_loss_term_passes(seed):
    report = gradient_suite(seed=seed)
    assert list(report) == ['detection', 'uda', 'uda_reversed', 'rotation_PropRot',
                            'rotation_ImgRot', 'consistency']
    for term, (error, where) in report.items():
        assert error < TOLERANCE, f'{term} at {where}'


def test_check_detects_a_wrong_sign():
    T.set_default_dtype('float64')
    w = T.Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)

    def loss():
        return T.sum(w * w)
    error, _ = check_gradients(loss, {'w': w}, np.random.default_rng(0))
    assert error < 1e-8
    error, where = check_gradients(loss, {'w': w}, np.random.default_rng(0),
                                   sign=lambda name: -1.0)
    assert error > 1 and where.startswith('w[')
