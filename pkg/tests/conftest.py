"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

import numpy as np
import pytest

from uplift_mt.dataset import ExperimentDataset, GroupId, CostStructure


# Hand-checkable experiment: control mean 0.25, arm mean 0.5
TINY_X = [[0.], [0.], [1.], [1.], [0.], [0.], [1.], [1.]]
TINY_Y = [0, 1, 0, 0, 1, 1, 0, 0]
TINY_W = [0, 0, 0, 0, 1, 1, 1, 1]


@pytest.fixture
def tiny():
    return ExperimentDataset(TINY_X, TINY_Y, TINY_W, [GroupId(0, 'control'), GroupId(1, 't1')], 0, ['x'])


@pytest.fixture
def tiny_cost():
    # v = 1, t1: impression 0.01, triggered 0.2
    return CostStructure(1., {'control': 0., 't1': 0.01}, {'control': 0., 't1': 0.2})


@pytest.fixture
def random_ds():
    def make(seed=0, sizes=(50, 50), d=3, rate=0.3, control=True, effects=None):
        rng = np.random.default_rng(seed)
        assignment = np.repeat(np.arange(len(sizes)), sizes)
        n = assignment.size
        X = rng.standard_normal((n, d))
        p = np.full(n, rate)
        if effects is not None:
            p = np.clip(p + np.asarray(effects)[assignment], 0., 1.)
        y = (rng.random(n) < p).astype(np.int8)
        labels = (['control'] if control else []) + ['t{}'.format(i) for i in range(1, len(sizes) + (0 if control else 1))]
        table = [GroupId(i, l) for i, l in enumerate(labels)]
        return ExperimentDataset(X, y, assignment, table, 0 if control else None)
    return make
