import numpy as np
import scipy.stats


def mean_confidence_interval(data, confidence=0.95):
    """Calculates mean and confidence interval from samples such that they lie within m +/- h
    with the given confidence.

    A single sample has no spread estimate: its half-width is reported as nan.

    Args:
        data (np.array): Sample to calculate the confidence interval.
        confidence (float): Confidence of the interval (betwen 0 and 1).
    """
    data = np.asarray(data, dtype=np.float64)
    n = len(data)
    if n == 0:
        raise ValueError('Cannot compute a confidence interval of an empty sample.')
    m = float(np.mean(data))
    if n == 1:
        return m, float('nan')
    se = scipy.stats.sem(data)
    h = se * scipy.stats.t.ppf((1 + confidence) / 2., n - 1)
    return m, float(h)


def median(data):
    return float(np.median(np.asarray(data, dtype=np.float64)))
