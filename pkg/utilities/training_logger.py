import csv
import os
import time

from torch.utils.tensorboard import SummaryWriter

METRICS_HEADER = ['step', 'l_det', 'l_uda', 'l_rp', 'l_cl', 'total', 'cl_accept_fraction',
                  'target_map']
TIMING_HEADER = ['step', 'seconds']


class TrainingLogger:
    def __init__(self, hyper_params, output_dir, loss_freq=10, tensorboard=True):
        """Instantiate a TrainingLogger.

        The metrics CSV receives every step and holds no wall-clock values, so two runs with the
        same configuration produce identical files. Elapsed time goes to timing.csv and
        TensorBoard.

        Args:
            hyper_params (dict): Parameters used to train the model (for reproducibility).
            output_dir (str): Folder receiving metrics.csv, timing.csv and the TensorBoard run.
            loss_freq (int, optional): Frequency at which the loss values are updated in
                TensorBoard. Defaults to 10.
            tensorboard (bool, optional): Whether to write TensorBoard events. Defaults to True.
        """
        os.makedirs(output_dir, exist_ok=True)
        self.metrics_path = os.path.join(output_dir, 'metrics.csv')
        self.timing_path = os.path.join(output_dir, 'timing.csv')
        self._metrics_file = open(self.metrics_path, 'w', newline='')
        self._timing_file = open(self.timing_path, 'w', newline='')
        self._metrics = csv.writer(self._metrics_file)
        self._timing = csv.writer(self._timing_file)
        self._metrics.writerow(METRICS_HEADER)
        self._timing.writerow(TIMING_HEADER)
        self._metrics_file.flush()
        self._timing_file.flush()

        self.writer = None
        if tensorboard:
            self.writer = SummaryWriter(log_dir=os.path.join(output_dir, 'tensorboard'))
            self.writer.add_text('data/hyperparams', str(hyper_params), 0)
        self.loss_freq = loss_freq
        self._start = time.perf_counter()

    def step(self, step, breakdown, target_map=None):
        """Append one metrics row and, every loss_freq steps, the TensorBoard scalars.

        Args:
            step (int): Index of the optimizer step.
            breakdown (utilities.losses.LossBreakdown): Losses of the step.
            target_map (float, optional): Target-test mAP when evaluated at this step.
        """
        self._metrics.writerow([step] + [repr(float(v)) for v in breakdown]
                               + ['' if target_map is None else repr(float(target_map))])
        self._metrics_file.flush()
        seconds = time.perf_counter() - self._start
        self._timing.writerow([step, '{:.3f}'.format(seconds)])
        self._timing_file.flush()
        if self.writer is None:
            return
        if step % self.loss_freq == 0:
            for name, value in breakdown._asdict().items():
                self.writer.add_scalar(f'loss/{name}', value, step)
            self.writer.add_scalar('time/seconds', seconds, step)
        if target_map is not None:
            self.writer.add_scalar('eval/target_map', target_map, step)

    def log_text(self, label, msg):
        """Add text to tensorboard
        Args:
            label (str): Label to identify in tensorboard display
            msg (str, float): Message to display (can be a numerical value)
        """
        if self.writer is not None:
            self.writer.add_text('data/' + label, str(msg), 0)

    def close(self):
        self._metrics_file.close()
        self._timing_file.close()
        if self.writer is not None:
            self.writer.close()
