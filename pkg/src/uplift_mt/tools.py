"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Functions shared by the dataset, learner, generator and evaluation modules.
"""

import os
import hashlib
import tempfile

import numpy as np
from scipy.special import expit
from scipy.optimize import bisect
from scipy.stats import sem

# Normal-approximation 95% interval, as used throughout the reports
Z95 = 1.96


## IO

def atomic_write_text(file_name, text):
    # Temp file in the target directory, then rename over the destination
    dir_name = os.path.dirname(os.path.abspath(file_name))
    fd, tmp_name = tempfile.mkstemp(dir=dir_name, prefix='.tmp_', suffix=os.path.basename(file_name))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp_name, file_name)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def atomic_write_csv(df, file_name, float_format='%.17g'):
    text = df.to_csv(index=False, float_format=float_format, lineterminator='\n')
    atomic_write_text(file_name, text)


## SEEDS

def derive_seed(seed, *keys):
    # Scheduling-independent child seed for (master seed, key path)
    ss = np.random.SeedSequence([int(seed)] + [int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def derive_rng(seed, *keys):
    return np.random.default_rng(derive_seed(seed, *keys))


## DISTRIBUTIONS

def sigmoid(x):
    return expit(x)


def calibrate_intercept(scores, target_rate, xtol=1e-12):
    # Intercept b such that mean(sigmoid(scores + b)) == target_rate
    scores = np.asarray(scores, dtype=np.float64)

    def gap(b):
        return sigmoid(scores + b).mean() - target_rate

    span = np.abs(scores).max() if scores.size else 0.
    lo = -50. - span
    hi = 50. + span
    return bisect(gap, lo, hi, xtol=xtol)


## STATISTICS

def mean_se(values):
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n == 0:
        return np.nan, np.nan
    mean = values.mean()
    if n == 1:
        return mean, 0.
    return mean, float(sem(values, ddof=1))


def normal_interval(se, z=Z95):
    return z * se


def fingerprint_arrays(*arrays):
    h = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()
