import os
import sys

import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from tests.adaptation_experiment import (MIN_MAP_GAIN, _base_params, _ensure_data,
                                         ablation_medians, ordering_holds)

ADAPTATION_STEPS = 3000
ADAPTATION_SEEDS = [0, 1, 2]


@pytest.mark.slow
def test_auxiliary_tasks_improve_target_map(tmp_path):
    paths = _ensure_data(str(tmp_path / 'shapes'))
    params = _base_params(paths, str(tmp_path / 'runs'), ADAPTATION_STEPS)
    medians = ablation_medians(params, ADAPTATION_SEEDS)
    assert ordering_holds(medians), medians
    assert medians['+RP+CL'] - medians['source-only'] >= MIN_MAP_GAIN, medians
    assert medians['+RP'] >= medians['+ImgRot'], medians
