import os
import sys

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from environments.datasets import DatasetError, SceneDataset, TargetImageDataset
from environments.scenes import CLASS_NAMES
from networks import tensor as T
from rpcl_detector import RpclDetector

# Per-purpose random streams derived from the master seed as default_rng([seed, stream])
INIT_STREAM, SOURCE_STREAM, TARGET_STREAM, ROTATION_STREAM, AUGMENTATION_STREAM = range(5)


def stream_rng(seed, stream):
    return np.random.default_rng([seed, stream])


def load_detector(params):
    """Return the detector created from the given parameters, initialized from the seed's init
    stream or loaded from params['load_path'].

    Args:
        params (dict): Experiment parameters (see experiment_params folder).
    """
    T.set_default_dtype(params["networks"]["dtype"])
    detector = RpclDetector(n_classes=len(CLASS_NAMES),
                            top_k=params["networks"]["top_k"],
                            reversal_strength=params["networks"]["reversal_strength"])
    detector.initialize(stream_rng(params["seed"], INIT_STREAM),
                        scale=params["networks"]["init_scale"])
    if params.get("load_path"):
        detector.load(params["load_path"])
    return detector


def _require_path(params, key):
    path = params["dataset"][key]
    if path is None:
        raise DatasetError(f'dataset.{key} is not set.')
    return path


def get_datasets(params, need_target):
    """Get the source train, target train and target test datasets for the given params.

    Args:
        params (dict): Experiment parameters (see experiment_params folder).
        need_target (bool): Whether the training loop reads target images. When False the target
            train split is never opened.

    Returns:
        tuple(SceneDataset, TargetImageDataset or None, SceneDataset or None): The target test
            split is None when not configured (training then runs without evaluation).
    """
    source_train = SceneDataset(_require_path(params, "source_train"))
    target_train = None
    if need_target and params["dataset"]["target_train"] is not None:
        target_train = TargetImageDataset(params["dataset"]["target_train"])
    target_test = None
    if params["dataset"]["target_test"] is not None:
        target_test = SceneDataset(params["dataset"]["target_test"])
    return source_train, target_train, target_test


class ShuffledCycle:
    """Endless sequence of dataset indices: one seeded permutation per pass."""

    def __init__(self, length, rng):
        if length < 1:
            raise DatasetError('Cannot sample from an empty dataset.')
        self.length = length
        self.rng = rng
        self._order = []

    def next(self):
        if not self._order:
            self._order = list(self.rng.permutation(self.length))
        return int(self._order.pop(0))
