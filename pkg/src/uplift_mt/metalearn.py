"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Meta-learners for experiments with a control and m treatment arms: Two
Model, the multi-treatment X-Learner and R-Learner, and their net-value
variants that fold the conversion value v, impression costs c_t and
triggered costs s_t into the effect being estimated.

Every learner produces an UpliftModel whose predict_cate() returns one
column per non-control arm: the (conversion or net value) effect of that
arm relative to control. recommend() turns those columns into a per-user
treatment choice.

Designs without a control are handled by fit_pairwise(), which fits one
two-group model per pair of arms; the majority vote over pairs lives in
the evaluation module.
"""

import logging
from itertools import combinations

import numpy as np
from lmfit import Parameters, Minimizer

from uplift_mt.errors import FitError, CostError
from uplift_mt.baselearn import as_learner, learner_seed, crossfit_predict, CrossFitPlan, check_X
import uplift_mt.tools as tools

lg = logging.getLogger(__name__)

### VARS

KINDS = ('two_model', 'x_learner', 'r_learner')
OBJECTIVES = ('conversion', 'net_value')
PROPENSITY_MODES = ('empirical', 'learned')
PROPENSITY_EPS = 1e-6
# Cross-fitted R-Learner propensities are trimmed to [PROPENSITY_TRIM, 1 - PROPENSITY_TRIM]
PROPENSITY_TRIM = 1e-2

# Seed derivation keys: (master seed, group/arm index, stage)
STAGE_OUTCOME = 1
STAGE_EFFECT_CONTROL = 2
STAGE_EFFECT_ARM = 3
STAGE_PROPENSITY = 4
STAGE_MEAN = 5
STAGE_FINAL = 6


### PROPENSITY

class PropensityModel:
    """
    Per-group assignment scores e_t(x). Empirical mode keeps the group
    counts (randomized experiments); learned mode keeps one regression per
    group on the membership indicator, clipped and normalized per row.
    """

    def __init__(self, mode, counts, models=None, n_features=None):
        if mode not in PROPENSITY_MODES:
            raise FitError('Unknown propensity mode: {}'.format(mode))
        self.mode = mode
        self.counts = np.asarray(counts, dtype=np.int64)
        self.models = models
        self.n_features = n_features

    @classmethod
    def fit(cls, ds, mode='empirical', learner=None, seed=0):
        counts = ds.group_counts()
        if mode == 'empirical':
            return cls(mode, counts, n_features=ds.d)

        learner = as_learner(learner)
        models = []
        for g in ds.group_table:
            member = (ds.assignment == g.index).astype(np.float64)
            models.append(learner.fit(ds.features, member, seed=tools.derive_seed(seed, g.index, STAGE_PROPENSITY)))
        lg.info('Propensity: learned {} membership models'.format(len(models)))
        return cls(mode, counts, models, ds.d)

    @property
    def constants(self):
        return np.clip(self.counts / self.counts.sum(), PROPENSITY_EPS, 1 - PROPENSITY_EPS)

    def scores(self, X):
        X = check_X(X, self.n_features)
        if self.mode == 'empirical':
            return np.tile(self.constants, (X.shape[0], 1))

        raw = np.column_stack([m.predict(X) for m in self.models])
        raw = np.clip(raw, PROPENSITY_EPS, 1 - PROPENSITY_EPS)
        raw = raw / raw.sum(axis=1, keepdims=True)
        return np.clip(raw, PROPENSITY_EPS, 1 - PROPENSITY_EPS)

    def pair_weight(self, X, arm, control):
        # Weight e_arm / (e_arm + e_control) placed on the control-side effect model
        X = check_X(X, self.n_features)
        if self.mode == 'empirical':
            g = self.counts[arm] / (self.counts[arm] + self.counts[control])
            return np.full(X.shape[0], g)
        s = self.scores(X)
        return s[:, arm] / (s[:, arm] + s[:, control])


### MODELS

class UpliftModel:

    def __init__(self, kind, objective, group_table, control_index, n_features, feature_names=None,
                 propensity=None, cost=None, outcome_models=None, effect_models=None, meta=None):
        if kind not in KINDS:
            raise FitError('Unknown model kind: {}'.format(kind))
        if objective not in OBJECTIVES:
            raise FitError('Unknown objective: {}'.format(objective))
        if objective == 'net_value' and cost is None:
            raise CostError('Objective net_value requires a cost structure')
        if control_index is None:
            raise FitError('UpliftModel requires a control group')

        self.kind = kind
        self.objective = objective
        self.group_table = tuple(group_table)
        self.control_index = int(control_index)
        self.n_features = int(n_features)
        self.feature_names = tuple(feature_names) if feature_names is not None else None
        self.propensity = propensity
        self.cost = cost
        self.outcome_models = outcome_models or {}
        self.effect_models = effect_models or {}
        self.meta = meta or {}

    def __repr__(self):
        return 'UpliftModel(kind={}, objective={}, arms={})'.format(self.kind, self.objective, self.arm_labels)

    @property
    def arms(self):
        return [g.index for g in self.group_table if g.index != self.control_index]

    @property
    def arm_labels(self):
        return [self.group_table[a].label for a in self.arms]

    @property
    def control_label(self):
        return self.group_table[self.control_index].label

    def predict_cate(self, X):
        X = check_X(X, self.n_features)
        cols = []
        for arm in self.arms:
            if self.kind == 'two_model':
                cols.append(self._two_model_effect(X, arm))
            elif self.kind == 'x_learner':
                g = self.propensity.pair_weight(X, arm, self.control_index)
                tau_c = self.effect_models[arm]['control'].predict(X)
                tau_t = self.effect_models[arm]['arm'].predict(X)
                cols.append(g * tau_c + (1 - g) * tau_t)
            else:
                cols.append(self.effect_models[arm]['final'].predict(X))
        return np.column_stack(cols)

    def _two_model_effect(self, X, arm):
        mu_t = self.outcome_models[arm].predict(X)
        mu_c = self.outcome_models[self.control_index].predict(X)
        if self.objective == 'conversion':
            return mu_t - mu_c
        v = self.cost.conversion_value
        c, s = self.cost.arrays(self.group_table, self.control_index)
        return (v - s[arm]) * mu_t - (v - s[self.control_index]) * mu_c - (c[arm] - c[self.control_index])


class PairwiseModel:
    """
    One two-group model per unordered pair (a, b), a < b, with a in the
    control role. Used when the experiment has no control group.
    """
    kind = 'majority_vote'

    def __init__(self, base_kind, objective, group_table, pair_models, n_features, feature_names=None,
                 cost=None, meta=None):
        self.base_kind = base_kind
        self.objective = objective
        self.group_table = tuple(group_table)
        self.pair_models = dict(pair_models)
        self.n_features = int(n_features)
        self.feature_names = tuple(feature_names) if feature_names is not None else None
        self.cost = cost
        self.meta = meta or {}
        self.control_index = None

    def __repr__(self):
        return 'PairwiseModel(base={}, objective={}, groups={})'.format(
            self.base_kind, self.objective, [g.label for g in self.group_table])

    @property
    def pairs(self):
        return sorted(self.pair_models)

    def predict_pairwise(self, X):
        X = check_X(X, self.n_features)
        return {pair: self.pair_models[pair].predict_cate(X)[:, 0] for pair in self.pairs}


### PSEUDO-EFFECTS

class PseudoEffects:
    """
    Imputed individual effects per (arm, source group). source 'control'
    rows come from the control group, source 'arm' rows from the arm itself.
    """

    def __init__(self):
        self.entries = {}

    def add(self, arm, source, rows, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(rows),) or not np.all(np.isfinite(values)):
            raise FitError('Pseudo-effects for arm {} / {} must be finite and aligned to their rows'.format(arm, source))
        self.entries[(arm, source)] = (np.asarray(rows), values)

    def get(self, arm, source):
        return self.entries[(arm, source)]

    @property
    def arms(self):
        return sorted(set(a for a, _ in self.entries))


def check_train(train, learner):
    if not train.has_control:
        raise FitError('This learner needs a control group; none found in groups {}'.format(train.labels))
    counts = train.group_counts()
    for g in train.group_table:
        if counts[g.index] < learner.min_samples_leaf:
            raise FitError('Group {} has {} rows, fewer than min_samples_leaf={}'
                           .format(g.label, counts[g.index], learner.min_samples_leaf))
    if train.n_groups < 2:
        raise FitError('Need a control and at least one treatment arm')


def fit_outcome_models(train, learner, seed):
    # mu_t(x) per group, fit on that group's rows
    models = {}
    for g in train.group_table:
        rows = train.rows_of(g.index)
        models[g.index] = learner.fit(train.features[rows], train.outcome[rows],
                                      seed=tools.derive_seed(seed, g.index, STAGE_OUTCOME))
    return models


def build_pseudo_effects(train, mu_models):
    control = train.control_index
    rows_c = train.rows_of(control)
    X_c = train.features[rows_c]
    y_c = train.outcome[rows_c].astype(np.float64)

    pe = PseudoEffects()
    for arm in train.arm_indices:
        rows_t = train.rows_of(arm)
        X_t = train.features[rows_t]
        y_t = train.outcome[rows_t].astype(np.float64)
        pe.add(arm, 'control', rows_c, mu_models[arm].predict(X_c) - y_c)
        pe.add(arm, 'arm', rows_t, y_t - mu_models[control].predict(X_t))
    return pe


def build_nv_pseudo_effects(train, mu_models, cost):
    control = train.control_index
    v = cost.conversion_value
    c, s = cost.arrays(train.group_table, control)

    rows_c = train.rows_of(control)
    X_c = train.features[rows_c]
    y_c = train.outcome[rows_c].astype(np.float64)

    pe = PseudoEffects()
    for arm in train.arm_indices:
        rows_t = train.rows_of(arm)
        X_t = train.features[rows_t]
        y_t = train.outcome[rows_t].astype(np.float64)
        dc = c[arm] - c[control]
        d_arm = (v - s[arm]) * y_t - (v - s[control]) * mu_models[control].predict(X_t) - dc
        d_control = (v - s[arm]) * mu_models[arm].predict(X_c) - (v - s[control]) * y_c - dc
        pe.add(arm, 'control', rows_c, d_control)
        pe.add(arm, 'arm', rows_t, d_arm)
    return pe


### TWO MODEL

def fit_two_model(train, params=None, cost=None):
    learner = as_learner(params)
    check_train(train, learner)
    seed = learner_seed(learner)
    objective = 'conversion' if cost is None else 'net_value'
    if cost is not None:
        cost.arrays(train.group_table, train.control_index)

    mu = fit_outcome_models(train, learner, seed)
    lg.info('Two Model: fitted {} outcome models'.format(len(mu)))
    return UpliftModel('two_model', objective, train.group_table, train.control_index, train.d,
                       train.feature_names, PropensityModel.fit(train), cost, outcome_models=mu,
                       meta=_meta(train, learner))


### X-LEARNER

def _fit_x(train, learner, propensity_mode, cost):
    check_train(train, learner)
    seed = learner_seed(learner)
    control = train.control_index

    # Stage 1: response functions per group
    mu = fit_outcome_models(train, learner, seed)

    # Stage 2: pseudo-effects
    if cost is None:
        pe = build_pseudo_effects(train, mu)
    else:
        pe = build_nv_pseudo_effects(train, mu, cost)

    # Stage 3: effect models on each source group
    effects = {}
    for arm in train.arm_indices:
        rows_c, d_c = pe.get(arm, 'control')
        rows_t, d_t = pe.get(arm, 'arm')
        effects[arm] = {
            'control': learner.fit(train.features[rows_c], d_c, seed=tools.derive_seed(seed, arm, STAGE_EFFECT_CONTROL)),
            'arm': learner.fit(train.features[rows_t], d_t, seed=tools.derive_seed(seed, arm, STAGE_EFFECT_ARM)),
        }
        lg.info('X-Learner: arm {} fitted on {} control / {} arm rows'
                .format(train.group_table[arm].label, rows_c.size, rows_t.size))

    propensity = PropensityModel.fit(train, propensity_mode, learner, seed)
    objective = 'conversion' if cost is None else 'net_value'
    return UpliftModel('x_learner', objective, train.group_table, control, train.d, train.feature_names,
                       propensity, cost, outcome_models=mu, effect_models=effects, meta=_meta(train, learner))


def fit_x_learner(train, params=None, propensity_mode='empirical'):
    return _fit_x(train, as_learner(params), propensity_mode, None)


def fit_nv_x_learner(train, params=None, propensity_mode='empirical', cost=None):
    if cost is None:
        raise CostError('Net value X-Learner requires a cost structure')
    return _fit_x(train, as_learner(params), propensity_mode, cost)


def fit_x_learner_two_group(train, params=None, propensity_mode='empirical'):
    """
    Classic two-group X-Learner: tau(x) = e(x) tau_0(x) + (1 - e(x)) tau_1(x),
    e the propensity of the treated group.
    """
    learner = as_learner(params)
    check_train(train, learner)
    if train.n_groups != 2:
        raise FitError('Two-group X-Learner needs exactly one treatment arm, got {}'.format(train.n_groups - 1))
    seed = learner_seed(learner)
    c_idx = train.control_index
    t_idx = train.arm_indices[0]

    rows_0 = train.rows_of(c_idx)
    rows_1 = train.rows_of(t_idx)
    X_0, y_0 = train.features[rows_0], train.outcome[rows_0].astype(np.float64)
    X_1, y_1 = train.features[rows_1], train.outcome[rows_1].astype(np.float64)

    mu_0 = learner.fit(X_0, y_0, seed=tools.derive_seed(seed, c_idx, STAGE_OUTCOME))
    mu_1 = learner.fit(X_1, y_1, seed=tools.derive_seed(seed, t_idx, STAGE_OUTCOME))

    d_0 = mu_1.predict(X_0) - y_0
    d_1 = y_1 - mu_0.predict(X_1)
    tau_0 = learner.fit(X_0, d_0, seed=tools.derive_seed(seed, t_idx, STAGE_EFFECT_CONTROL))
    tau_1 = learner.fit(X_1, d_1, seed=tools.derive_seed(seed, t_idx, STAGE_EFFECT_ARM))

    propensity = PropensityModel.fit(train, propensity_mode, learner, seed)
    return UpliftModel('x_learner', 'conversion', train.group_table, c_idx, train.d, train.feature_names,
                       propensity, None, outcome_models={c_idx: mu_0, t_idx: mu_1},
                       effect_models={t_idx: {'control': tau_0, 'arm': tau_1}}, meta=_meta(train, learner))


### R-LEARNER

def r_learner_targets(y, w, m_hat, e_hat):
    return _r_targets(np.asarray(y, dtype=np.float64) - m_hat, w, e_hat)


def _r_targets(numerator, w, e_hat):
    resid_w = np.asarray(w, dtype=np.float64) - e_hat
    if np.any(np.abs(resid_w) < PROPENSITY_EPS):
        raise FitError('Degenerate propensity: |W - e| < {} for {} rows'
                       .format(PROPENSITY_EPS, int((np.abs(resid_w) < PROPENSITY_EPS).sum())))
    return numerator / resid_w, resid_w**2


def nv_r_residuals(y, m_hat, s_obs, c_obs, v):
    # (v - s_i) Y_i - (v - s_bar) m(X_i) - (c_i - c_bar), averages over the regression sample
    y = np.asarray(y, dtype=np.float64)
    s_obs = np.asarray(s_obs, dtype=np.float64)
    c_obs = np.asarray(c_obs, dtype=np.float64)
    s_bar = s_obs.mean()
    c_bar = c_obs.mean()
    return (v - s_obs) * y - (v - s_bar) * m_hat - (c_obs - c_bar)


def rloss(tau, y, w, m_hat, e_hat):
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    return float(np.mean(((y - m_hat) - (w - e_hat) * tau)**2))


def fit_constant_rloss(y, w, m_hat, e_hat, n_grid=201):
    """
    Brute-force minimizer of the R-loss over a constant effect: grid search
    over the range of transformed targets, then a least-squares polish.
    """
    numer = np.asarray(y, dtype=np.float64) - m_hat
    resid_w = np.asarray(w, dtype=np.float64) - e_hat
    z, _ = _r_targets(numer, w, e_hat)
    lo, hi = float(z.min()), float(z.max())
    if hi - lo < 1e-12:
        return lo

    def residual(pars):
        return numer - resid_w * pars['tau'].value

    pars = Parameters()
    pars.add('tau', value=(lo + hi) / 2, min=lo, max=hi)
    mini = Minimizer(residual, pars)
    coarse = mini.minimize(method='brute', Ns=n_grid)

    pars_fine = Parameters()
    pars_fine.add('tau', value=coarse.params['tau'].value)
    fine = mini.minimize(method='leastsq', params=pars_fine, xtol=1e-15, ftol=1e-15)
    return float(fine.params['tau'].value)


def _fit_r(train, learner, propensity_mode, plan, cost):
    check_train(train, learner)
    if propensity_mode not in PROPENSITY_MODES:
        raise FitError('Unknown propensity mode: {}'.format(propensity_mode))
    plan = plan or CrossFitPlan()
    seed = learner_seed(learner)
    control = train.control_index
    counts = train.group_counts()
    if cost is not None:
        v = cost.conversion_value
        c, s = cost.arrays(train.group_table, control)

    effects = {}
    for arm in train.arm_indices:
        rows = np.flatnonzero((train.assignment == control) | (train.assignment == arm))
        X = train.features[rows]
        y = train.outcome[rows].astype(np.float64)
        groups = train.assignment[rows]
        w = (groups == arm).astype(np.float64)

        # Out-of-fold mean outcome and propensity
        m_hat = crossfit_predict(X, y, None, learner, plan, seed=tools.derive_seed(seed, arm, STAGE_MEAN))
        if propensity_mode == 'empirical':
            e_hat = np.full(rows.size, counts[arm] / (counts[arm] + counts[control]))
        else:
            e_hat = crossfit_predict(X, w, None, learner, plan, seed=tools.derive_seed(seed, arm, STAGE_PROPENSITY))
            e_hat = np.clip(e_hat, PROPENSITY_TRIM, 1 - PROPENSITY_TRIM)

        if cost is None:
            numer = y - m_hat
        else:
            numer = nv_r_residuals(y, m_hat, s[groups], c[groups], v)
        z, weights = _r_targets(numer, w, e_hat)

        effects[arm] = {'final': learner.fit(X, z, weights, seed=tools.derive_seed(seed, arm, STAGE_FINAL))}
        lg.info('R-Learner: arm {} fitted on {} rows'.format(train.group_table[arm].label, rows.size))

    propensity = PropensityModel.fit(train)
    objective = 'conversion' if cost is None else 'net_value'
    meta = _meta(train, learner)
    meta['crossfit'] = plan.to_dict()
    meta['propensity_mode'] = propensity_mode
    return UpliftModel('r_learner', objective, train.group_table, control, train.d, train.feature_names,
                       propensity, cost, effect_models=effects, meta=meta)


def fit_r_learner(train, params=None, propensity_mode='empirical', plan=None):
    return _fit_r(train, as_learner(params), propensity_mode, plan, None)


def fit_nv_r_learner(train, params=None, propensity_mode='empirical', plan=None, cost=None):
    if cost is None:
        raise CostError('Net value R-Learner requires a cost structure')
    return _fit_r(train, as_learner(params), propensity_mode, plan, cost)


### DISPATCH

def fit_model(kind, train, params=None, objective='conversion', propensity_mode='empirical', plan=None, cost=None):
    if objective not in OBJECTIVES:
        raise FitError('Unknown objective: {}'.format(objective))
    if objective == 'net_value' and cost is None:
        raise CostError('Objective net_value requires a cost structure')
    cost = cost if objective == 'net_value' else None

    if kind == 'two_model':
        return fit_two_model(train, params, cost)
    if kind == 'x_learner':
        return _fit_x(train, as_learner(params), propensity_mode, cost)
    if kind == 'r_learner':
        return _fit_r(train, as_learner(params), propensity_mode, plan, cost)
    raise FitError('Unknown model kind: {}'.format(kind))


def fit_pairwise(train, kind, params=None, objective='conversion', propensity_mode='empirical', plan=None, cost=None):
    learner = as_learner(params)
    if objective == 'net_value' and cost is not None:
        # Each pair puts one arm in the control role; every arm still needs its costs
        cost.arrays(train.group_table, train.control_index)
    pair_models = {}
    for a, b in combinations(range(train.n_groups), 2):
        sub = train.pair(a, b)
        pair_models[(a, b)] = fit_model(kind, sub, learner, objective, propensity_mode, plan, cost)
        lg.info('Pairwise: {} vs {} fitted'.format(train.group_table[b].label, train.group_table[a].label))
    return PairwiseModel(kind, objective, train.group_table, pair_models, train.d, train.feature_names,
                         cost if objective == 'net_value' else None, _meta(train, learner))


### POLICY

def predict_cate(model, X):
    return model.predict_cate(X)


def recommend(model, X, include_control=False, cate=None):
    # Group index per row: first arm attaining the max; control when every arm is negative
    if cate is None:
        cate = model.predict_cate(X)
    arms = np.asarray(model.arms)
    rec = arms[np.argmax(cate, axis=1)]
    if include_control:
        rec = np.where(np.all(cate < 0, axis=1), model.control_index, rec)
    return rec


def recommended_scores(model, cate, rec):
    # Score of the recommended arm; control scores 0
    scores = np.zeros(cate.shape[0])
    for j, arm in enumerate(model.arms):
        hit = rec == arm
        scores[hit] = cate[hit, j]
    return scores


def _meta(train, learner):
    return {'seed': learner_seed(learner), 'learner': learner.to_dict(), 'n_train': train.n,
            'fingerprint': train.fingerprint()}
