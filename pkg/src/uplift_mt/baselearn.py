"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Regression base learners shared by every meta-learner: a variance-reduction
regression tree, a bootstrap random forest built from it, a constant mean
predictor, and the K-fold cross-fitting that produces out-of-fold
predictions.

Trees are stored as flat node arrays (feature, threshold, left, right,
value); a leaf has feature == -1.
"""

import logging
from dataclasses import dataclass, replace
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from sklearn.model_selection import KFold

from uplift_mt.errors import FitError, ValidationError
import uplift_mt.tools as tools

lg = logging.getLogger(__name__)

### VARS

LEAF = -1


### PARAMETERS

@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_features: int = 8
    max_depth: int = 10
    min_samples_leaf: int = 100
    seed: int = 0
    bootstrap: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        for name in ('n_trees', 'max_features', 'max_depth', 'min_samples_leaf', 'n_jobs'):
            if getattr(self, name) < 1:
                raise FitError('ForestParams.{} must be >= 1, got {}'.format(name, getattr(self, name)))
        if self.seed < 0:
            raise FitError('ForestParams.seed must be non-negative')

    def features_for(self, d):
        if self.max_features > d:
            lg.debug('Forest: max_features={} capped to d={}'.format(self.max_features, d))
        return min(self.max_features, d)

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def to_dict(self):
        return {'n_trees': self.n_trees, 'max_features': self.max_features, 'max_depth': self.max_depth,
                'min_samples_leaf': self.min_samples_leaf, 'seed': self.seed, 'bootstrap': self.bootstrap,
                'n_jobs': self.n_jobs}


## Input checks

def check_X(X, n_features=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValidationError('Feature matrix must be 2-d, got shape {}'.format(X.shape))
    if n_features is not None and X.shape[1] != n_features:
        raise ValidationError('Feature dimension mismatch: model expects {}, got {}'.format(n_features, X.shape[1]))
    return X


def check_fit_args(X, y, w=None):
    X = check_X(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] == 0:
        raise FitError('Cannot fit on empty data')
    if y.shape[0] != X.shape[0]:
        raise FitError('X has {} rows but y has {}'.format(X.shape[0], y.shape[0]))
    if w is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.shape[0] != y.shape[0]:
            raise FitError('X has {} rows but w has {}'.format(X.shape[0], w.shape[0]))
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise FitError('Sample weights must be finite and non-negative')
    if not np.all(np.isfinite(y)):
        raise FitError('Targets must be finite')
    return X, y, w


def weighted_mean(y, w):
    # Constant targets return the value itself, not a rounded weighted sum
    if y.size and np.ptp(y) == 0:
        return float(y[0])
    w_sum = w.sum()
    if w_sum > 0:
        return float(np.dot(w, y) / w_sum)
    return float(y.mean())


### TREE

class RegressionTree:

    def __init__(self, feature, threshold, left, right, value, n_features):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.n_features = int(n_features)

    @property
    def n_nodes(self):
        return self.feature.size

    @property
    def n_leaves(self):
        return int((self.feature == LEAF).sum())

    @property
    def depth(self):
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X):
        # Leaf index reached by every row
        X = check_X(X, self.n_features)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict(self, X):
        return self.value[self.apply(X)]


class _TreeBuilder:

    def __init__(self, X, y, w, params, rng):
        self.X = X
        self.y = y
        self.w = w
        self.rng = rng
        self.max_depth = params.max_depth
        self.min_leaf = params.min_samples_leaf
        self.n_candidates = params.features_for(X.shape[1])

        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def build(self):
        self._grow(np.arange(self.y.size), 0)
        return RegressionTree(self.feature, self.threshold, self.left, self.right, self.value, self.X.shape[1])

    def _new_node(self, value):
        self.feature.append(LEAF)
        self.threshold.append(0.)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        return len(self.feature) - 1

    def _grow(self, rows, depth):
        y = self.y[rows]
        node = self._new_node(weighted_mean(y, self.w[rows]))

        # Stopping rules: depth, leaf size, zero impurity
        if depth >= self.max_depth or rows.size < 2 * self.min_leaf or np.ptp(y) == 0:
            return node

        split = self._best_split(rows)
        if split is None:
            return node

        feat, thr = split
        go_left = self.X[rows, feat] <= thr
        self.feature[node] = feat
        self.threshold[node] = thr
        self.left[node] = self._grow(rows[go_left], depth + 1)
        self.right[node] = self._grow(rows[~go_left], depth + 1)
        return node

    def _best_split(self, rows):
        n = rows.size
        d = self.X.shape[1]
        y = self.y[rows]
        w = self.w[rows]

        # Candidate features, scanned in index order so ties keep the lowest index
        feats = np.sort(self.rng.choice(d, size=self.n_candidates, replace=False))

        # Split after sorted position i, both sides keeping >= min_leaf rows
        pos = np.arange(self.min_leaf - 1, n - self.min_leaf)

        best = None
        best_gain = 0.
        for f in feats:
            x = self.X[rows, f]
            order = np.argsort(x, kind='stable')
            xs = x[order]
            cw = np.cumsum(w[order])
            cs = np.cumsum(w[order] * y[order])
            w_tot = cw[-1]
            s_tot = cs[-1]

            w_l = cw[pos]
            s_l = cs[pos]
            w_r = w_tot - w_l
            s_r = s_tot - s_l
            valid = (xs[pos] < xs[pos + 1]) & (w_l > 0) & (w_r > 0)
            if not valid.any():
                continue

            with np.errstate(divide='ignore', invalid='ignore'):
                gain = s_l**2 / w_l + s_r**2 / w_r - s_tot**2 / w_tot
            gain = np.where(valid, gain, -np.inf)

            # First maximum -> lowest threshold
            k = int(np.argmax(gain))
            if gain[k] > best_gain:
                lo = xs[pos[k]]
                hi = xs[pos[k] + 1]
                thr = lo + (hi - lo) / 2
                if not lo <= thr < hi:
                    thr = lo
                best_gain = gain[k]
                best = (int(f), float(thr))

        return best


def fit_tree(X, y, w=None, params=None, rng=None):
    params = params or ForestParams()
    X, y, w = check_fit_args(X, y, w)
    if y.size < params.min_samples_leaf:
        raise FitError('Tree needs at least min_samples_leaf={} rows, got {}'.format(params.min_samples_leaf, y.size))
    if rng is None:
        rng = tree_rng(params.seed, 0)
    return _TreeBuilder(X, y, w, params, rng).build()


def tree_rng(seed, tree_index):
    return tools.derive_rng(seed, tree_index)


### FOREST

class ForestModel:

    def __init__(self, trees, params, target_mean, n_features):
        self.trees = list(trees)
        self.params = params
        self.target_mean = float(target_mean)
        self.n_features = int(n_features)

    def predict(self, X):
        X = check_X(X, self.n_features)
        preds = np.stack([tree.predict(X) for tree in self.trees])
        return preds.mean(axis=0)


def _fit_forest_tree(X, y, w, params, tree_index):
    rng = tree_rng(params.seed, tree_index)
    if params.bootstrap:
        idx = rng.integers(0, y.size, y.size)
        X, y, w = X[idx], y[idx], w[idx]
    return _TreeBuilder(X, y, w, params, rng).build()


def fit_forest(X, y, w=None, params=None):
    params = params or ForestParams()
    X, y, w = check_fit_args(X, y, w)
    if y.size < params.min_samples_leaf:
        raise FitError('Forest needs at least min_samples_leaf={} rows, got {}'.format(params.min_samples_leaf, y.size))

    # Per-tree seeds derive from (seed, tree index), so results do not depend on scheduling
    if params.n_jobs > 1 and params.n_trees > 1:
        with ProcessPoolExecutor(max_workers=params.n_jobs) as pool:
            futs = [pool.submit(_fit_forest_tree, X, y, w, params, i) for i in range(params.n_trees)]
            trees = [fut.result() for fut in futs]
    else:
        trees = [_fit_forest_tree(X, y, w, params, i) for i in range(params.n_trees)]

    lg.debug('Forest: fitted {} trees on {} rows'.format(len(trees), y.size))
    return ForestModel(trees, params, weighted_mean(y, w), X.shape[1])


def predict(model, X):
    return model.predict(X)


### MEAN PREDICTOR

class MeanModel:

    def __init__(self, value, n_features):
        self.value = float(value)
        self.n_features = int(n_features)

    def predict(self, X):
        X = check_X(X, self.n_features)
        return np.full(X.shape[0], self.value)


def fit_mean(X, y, w=None):
    X, y, w = check_fit_args(X, y, w)
    return MeanModel(weighted_mean(y, w), X.shape[1])


### LEARNERS

class ForestLearner:
    name = 'forest'

    def __init__(self, params=None):
        self.params = params or ForestParams()

    @property
    def min_samples_leaf(self):
        return self.params.min_samples_leaf

    def fit(self, X, y, w=None, seed=None):
        params = self.params if seed is None else self.params.with_seed(seed)
        return fit_forest(X, y, w, params)

    def to_dict(self):
        return {'name': self.name, 'params': self.params.to_dict()}


class MeanLearner:
    name = 'mean'
    min_samples_leaf = 1

    def fit(self, X, y, w=None, seed=None):
        return fit_mean(X, y, w)

    def to_dict(self):
        return {'name': self.name}


def as_learner(obj=None):
    if obj is None:
        return ForestLearner()
    if isinstance(obj, ForestParams):
        return ForestLearner(obj)
    if hasattr(obj, 'fit') and hasattr(obj, 'min_samples_leaf'):
        return obj
    raise FitError('Not a base learner: {!r}'.format(obj))


def learner_seed(learner):
    return learner.params.seed if isinstance(learner, ForestLearner) else 0


### CROSS-FITTING

@dataclass(frozen=True)
class CrossFitPlan:
    k_folds: int = 5
    seed: int = 0
    folds: tuple = None

    def assign(self, n):
        if self.folds is not None:
            folds = np.asarray(self.folds, dtype=np.int64)
            if folds.shape != (n,):
                raise FitError('Fold assignment has {} entries for {} rows'.format(folds.size, n))
            k = int(folds.max()) + 1
            if folds.min() < 0 or np.any(np.bincount(folds, minlength=k) == 0):
                raise FitError('Fold labels must cover 0..{} with no empty fold'.format(k - 1))
            return folds

        if self.k_folds < 2:
            raise FitError('Cross-fitting needs k_folds >= 2, got {}'.format(self.k_folds))
        if n < self.k_folds:
            raise FitError('Cannot split {} rows into {} folds'.format(n, self.k_folds))
        folds = np.empty(n, dtype=np.int64)
        kf = KFold(n_splits=self.k_folds, shuffle=True, random_state=self.seed % 2**32)
        for f, (_, test) in enumerate(kf.split(np.zeros((n, 1)))):
            folds[test] = f
        return folds

    def to_dict(self):
        return {'k_folds': self.k_folds, 'seed': self.seed}


def crossfit_predict(X, y, w=None, learner=None, plan=None, seed=None):
    learner = as_learner(learner)
    plan = plan or CrossFitPlan()
    X, y, w = check_fit_args(X, y, w)

    folds = plan.assign(y.size)
    k = int(folds.max()) + 1
    if k < 2:
        raise FitError('Cross-fitting needs at least 2 folds')
    base_seed = plan.seed if seed is None else seed

    oof = np.empty(y.size)
    for f in range(k):
        held = folds == f
        train = ~held
        if train.sum() < learner.min_samples_leaf:
            raise FitError('Fold {} leaves {} training rows, fewer than min_samples_leaf={}'
                           .format(f, int(train.sum()), learner.min_samples_leaf))
        model = learner.fit(X[train], y[train], w[train], seed=tools.derive_seed(base_seed, f))
        oof[held] = model.predict(X[held])
        lg.debug('Crossfit: fold {}/{} trained on {} rows'.format(f + 1, k, int(train.sum())))
    return oof
