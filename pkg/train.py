"""Script to train the detector on a labeled source domain and an unlabeled target domain.
"""
import math
import os
import sys
from collections import namedtuple

import numpy as np
import tqdm

from environments.scenes import CLASS_NAMES
from networks import tensor as T
from networks.optimizer import SgdState, sgd_step
from utilities import loader
from utilities.config import write_config
from utilities.evaluation import evaluate_detector, predict_dataset, write_predictions
from utilities.geometry import QuarterTurn, rotate_box
from utilities.imaging import AugmentationPolicy, rotate_image
from utilities.losses import (LossWeights, consistency_loss, consistency_targets,
                              detection_loss, rotation_loss, total_loss, uda_loss)
from utilities.training_logger import TrainingLogger

CHECKPOINT_FILENAME = 'checkpoint.bin'
PREDICTIONS_FILENAME = 'predictions.jsonl'
CONFIG_FILENAME = 'config.yaml'

TrainResult = namedtuple('TrainResult', ['detector', 'target_map', 'output_dir'])


class TrainingDivergedError(RuntimeError):
    """The total loss became NaN or infinite."""

    def __init__(self, step, breakdown):
        super().__init__(f'Non-finite total loss at step {step}: {dict(breakdown._asdict())}')
        self.step = step
        self.breakdown = breakdown


def active_tasks(params):
    """Tasks whose forward passes run: flag on and, for the weighted tasks, weight > 0."""
    tasks, weights = params["tasks"], params["weights"]
    return {
        'det': tasks["enable_det"],
        'uda': tasks["enable_uda"] and weights["alpha"] > 0,
        'rp': tasks["enable_rp"] and weights["lambda1"] > 0,
        'cl': tasks["enable_cl"] and weights["lambda2"] > 0,
    }


class RpclTrainer:

    def __init__(self, params):
        """Instantiate the detector, datasets and optimizer for training.

        Args:
            params (dict): Experiment parameters (see experiment_params folder).
        """
        self.params = params
        self.tasks = active_tasks(params)
        if not any(self.tasks.values()):
            raise ValueError('Every task is disabled or has zero weight: nothing to train.')
        self.weights = LossWeights.from_params(params["weights"])
        self.top_k = params["networks"]["top_k"]
        self.rotation_mode = params["tasks"]["rotation_mode"]
        self.rotation_proposals = params["tasks"]["rotation_proposals"]
        self.policy = AugmentationPolicy.from_params(params["augmentation"])

        self.detector = loader.load_detector(params)
        uses_target = self.tasks['uda'] or self.tasks['rp'] or self.tasks['cl']
        self.source_train, self.target_train, self.target_test = loader.get_datasets(
            params, need_target=uses_target)
        if self.tasks['uda'] and self.target_train is None:
            raise ValueError('The alignment task needs dataset.target_train.')

        seed = params["seed"]
        self.source_cycle = loader.ShuffledCycle(len(self.source_train),
                                                 loader.stream_rng(seed, loader.SOURCE_STREAM))
        self.target_cycle = None
        if self.target_train is not None:
            self.target_cycle = loader.ShuffledCycle(
                len(self.target_train), loader.stream_rng(seed, loader.TARGET_STREAM))
        self.rotation_rng = loader.stream_rng(seed, loader.ROTATION_STREAM)
        self.augmentation_rng = loader.stream_rng(seed, loader.AUGMENTATION_STREAM)

        self.optimizer = SgdState(params["optimization"]["learning_rate"],
                                  params["optimization"]["momentum"])
        self.step_count = 0

    def sample(self):
        """Draw one source scene, one target image, one rotation pair and one augmentation pair.

        The rotation and augmentation streams are consumed every step whether or not the tasks
        using them are active.
        """
        source_scene = self.source_train[self.source_cycle.next()]
        target_image = None
        if self.target_cycle is not None:
            target_image = self.target_train[self.target_cycle.next()]
        turns = tuple(QuarterTurn.from_index(int(i)) for i in self.rotation_rng.integers(4, size=2))
        augmentation_seeds = tuple(int(s) for s in self.augmentation_rng.integers(2 ** 31, size=2))
        return source_scene, target_image, turns, augmentation_seeds

    def _rotated_boxes(self, features, image, turn):
        # Proposals of the unrotated image, mapped into the rotated frame
        with T.no_grad():
            if features is None:
                features = self.detector.extract_features(image)
            boxes = self.detector.propose(features, self.top_k).boxes
        height, width = image.shape[:2]
        return [rotate_box(box, turn, width, height) for box in boxes]

    def training_step(self, source_scene, target_image, turns, augmentation_seeds):
        """Perform one optimization step on a source scene and a target image.

        Inactive tasks skip their forward passes entirely.

        Args:
            source_scene (environments.scenes.Scene): Labeled source scene.
            target_image (numpy.ndarray or None): Unlabeled target image.
            turns (tuple(QuarterTurn, QuarterTurn)): Rotations of the source and target image.
            augmentation_seeds (tuple(int, int)): Augmentation seeds of both images.

        Returns:
            (utilities.losses.LossBreakdown): Losses of the step.

        Raises:
            TrainingDivergedError: If the total loss is not finite.
        """
        detector, tasks = self.detector, self.tasks
        source_image = source_scene.image
        l_det = l_uda = l_rp = l_cl = None
        accept_fraction = 0.0
        with T.Tape() as tape:
            source_features = detector.extract_features(source_image)
            if tasks['det']:
                proposals = detector.propose(source_features, self.top_k)
                l_det = detection_loss(detector, source_features, proposals,
                                       source_scene.annotations)
            target_features = None
            if tasks['uda']:
                target_features = detector.extract_features(target_image)
                l_uda = uda_loss(detector, source_features, target_features)
            if tasks['rp']:
                rotated_target = None
                if target_image is not None:
                    rotated_target = rotate_image(target_image, turns[1])
                source_boxes = target_boxes = None
                if self.rotation_proposals == 'original' and self.rotation_mode == 'PropRot':
                    source_boxes = self._rotated_boxes(source_features, source_image, turns[0])
                    if target_image is not None:
                        target_boxes = self._rotated_boxes(target_features, target_image,
                                                           turns[1])
                l_rp = rotation_loss(detector, rotate_image(source_image, turns[0]), turns[0],
                                     rotated_target, turns[1], mode=self.rotation_mode,
                                     top_k=self.top_k, source_boxes=source_boxes,
                                     target_boxes=target_boxes)
            if tasks['cl']:
                targets = [consistency_targets(detector, source_image, self.weights.sigma,
                                               self.top_k, features=source_features)]
                if target_image is not None:
                    targets.append(consistency_targets(detector, target_image,
                                                       self.weights.sigma, self.top_k,
                                                       features=target_features))
                l_cl, accept_fraction = consistency_loss(
                    detector, source_image, target_image, self.policy, augmentation_seeds,
                    self.weights.sigma, self.top_k, targets=targets)
            total, breakdown = total_loss(l_det, l_uda, l_rp, l_cl, self.weights,
                                          accept_fraction)
        self.step_count += 1
        if not math.isfinite(breakdown.total):
            tape.clear()
            raise TrainingDivergedError(self.step_count, breakdown)
        T.backward(total)
        sgd_step(detector.parameters(), self.optimizer)
        return breakdown

    def evaluate(self):
        """Target-test mAP of the current parameters, or None without a test split."""
        if self.target_test is None:
            return None
        evaluation = self.params["evaluation"]
        result = evaluate_detector(self.detector, self.target_test, CLASS_NAMES,
                                   evaluation["score_threshold"], evaluation["nms_iou"],
                                   evaluation["workers"])
        return result.mAP

    def fit(self):
        """The trainer fits the detector and writes its artifacts to params['output_dir'].

        Returns:
            (TrainResult): The fitted detector, its final target-test mAP (or None) and the
                output folder.
        """
        output_dir = self.params["output_dir"]
        os.makedirs(output_dir, exist_ok=True)
        write_config(self.params, os.path.join(output_dir, CONFIG_FILENAME))
        training_logger = TrainingLogger(hyper_params=self.params,
                                         output_dir=output_dir,
                                         loss_freq=self.params["logging"]["loss_freq"],
                                         tensorboard=self.params["logging"]["tensorboard"])
        training_logger.log_text('active_tasks',
                                 ', '.join(k for k, active in self.tasks.items() if active))
        steps = self.params["optimization"]["steps"]
        interval = self.params["evaluation"]["interval"]
        target_map = None
        try:
            pbar = tqdm.trange(steps, disable=steps == 0)
            for _ in pbar:
                breakdown = self.training_step(*self.sample())
                step_map = None
                if self.step_count % interval == 0 or self.step_count == steps:
                    step_map = target_map = self.evaluate()
                training_logger.step(self.step_count, breakdown, step_map)

                # Progress-bar msg
                msg = ", ".join(f"{k}: {v:.2e}" for k, v in breakdown._asdict().items())
                pbar.set_description(msg)
        finally:
            training_logger.close()

        self.detector.save(os.path.join(output_dir, CHECKPOINT_FILENAME))
        if self.target_test is not None:
            evaluation = self.params["evaluation"]
            predictions = predict_dataset(self.detector, self.target_test,
                                          evaluation["score_threshold"], evaluation["nms_iou"],
                                          evaluation["workers"])
            write_predictions(os.path.join(output_dir, PREDICTIONS_FILENAME), predictions)
        return TrainResult(self.detector, target_map, output_dir)


def train(params):
    """Train with the given resolved configuration. See RpclTrainer.fit()."""
    return RpclTrainer(params).fit()


if __name__ == "__main__":
    import rpcl
    sys.exit(rpcl.main(['train'] + sys.argv[1:]))
