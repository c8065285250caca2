"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uplift_mt.errors import FitError, CostError
from uplift_mt.dataset import CostStructure, ExperimentDataset, GroupId
from uplift_mt.baselearn import ForestParams, MeanLearner, CrossFitPlan, fit_mean, as_learner
import uplift_mt.metalearn as ml


MEAN = MeanLearner()


def zero_cost(ds):
    labels = ds.labels
    return CostStructure(1., {l: 0. for l in labels}, {l: 0. for l in labels})


def small_forest(seed=0):
    return ForestParams(n_trees=3, max_features=2, max_depth=4, min_samples_leaf=5, seed=seed)


## Two Model

def test_two_model_tiny(tiny):
    model = ml.fit_two_model(tiny, MEAN)
    cate = ml.predict_cate(model, tiny.features)
    assert cate.shape == (8, 1)
    assert np.allclose(cate, 0.25, atol=1e-12)


def test_two_model_two_arms(random_ds):
    ds = random_ds(sizes=(4, 4, 10))
    # Outcomes with group means control 0.25, t1 0.5, t2 0.3
    y = np.array([1, 0, 0, 0] + [1, 1, 0, 0] + [1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
    ds = ExperimentDataset(ds.features, y, ds.assignment, ds.group_table, 0)
    cate = ml.fit_two_model(ds, MEAN).predict_cate(ds.features)
    assert np.allclose(cate[0], [0.25, 0.05], atol=1e-12)


def test_two_model_identical_outcomes(random_ds):
    ds = random_ds(sizes=(10, 10), rate=0.)
    assert np.all(ml.fit_two_model(ds, MEAN).predict_cate(ds.features) == 0.)


def test_missing_control(random_ds):
    ds = random_ds(sizes=(10, 10), control=False)
    for fit in (ml.fit_two_model, ml.fit_x_learner, ml.fit_r_learner):
        with pytest.raises(FitError):
            fit(ds, MEAN)


def test_group_smaller_than_leaf(random_ds):
    with pytest.raises(FitError, match='min_samples_leaf'):
        ml.fit_two_model(random_ds(sizes=(200, 50)), ForestParams(min_samples_leaf=100))


def test_dimension_mismatch(tiny):
    model = ml.fit_two_model(tiny, MEAN)
    with pytest.raises(ValueError):
        model.predict_cate(np.zeros((2, 3)))


## X-Learner

def test_x_learner_tiny_trace(tiny):
    model = ml.fit_x_learner(tiny, MEAN)
    mu = model.outcome_models
    assert mu[0].value == pytest.approx(0.25, abs=1e-12)
    assert mu[1].value == pytest.approx(0.5, abs=1e-12)

    pe = ml.build_pseudo_effects(tiny, mu)
    _, d_control = pe.get(1, 'control')
    _, d_arm = pe.get(1, 'arm')
    assert np.allclose(d_control, 0.5 - np.array([0, 1, 0, 0]), atol=1e-12)
    assert np.allclose(d_arm, np.array([1, 1, 0, 0]) - 0.25, atol=1e-12)

    assert model.effect_models[1]['control'].value == pytest.approx(0.25, abs=1e-12)
    assert model.effect_models[1]['arm'].value == pytest.approx(0.25, abs=1e-12)
    assert np.allclose(model.predict_cate(tiny.features), 0.25, atol=1e-12)


def test_x_learner_equals_two_group_form(random_ds):
    ds = random_ds(seed=4, sizes=(60, 90), effects=[0., 0.2])
    p = small_forest(seed=7)
    multi = ml.fit_x_learner(ds, p).predict_cate(ds.features)
    two = ml.fit_x_learner_two_group(ds, p).predict_cate(ds.features)
    assert np.array_equal(multi, two)


def test_x_learner_propensity_weights(random_ds):
    ds = random_ds(sizes=(30, 90, 60))
    prop = ml.PropensityModel.fit(ds)
    g = prop.pair_weight(ds.features[:3], 1, 0)
    assert np.all(g == 90 / 120)
    assert np.allclose(prop.pair_weight(ds.features[:3], 2, 0) + 30 / 90, 1., atol=1e-15)
    assert prop.scores(ds.features[:4]).sum(axis=1) == pytest.approx(1., abs=1e-12)


def test_learned_propensity_normalized(random_ds):
    ds = random_ds(sizes=(40, 40, 40))
    prop = ml.PropensityModel.fit(ds, 'learned', small_forest())
    s = prop.scores(ds.features)
    assert np.allclose(s.sum(axis=1), 1., atol=1e-6)
    assert s.min() >= ml.PROPENSITY_EPS


def test_x_learner_equal_weights(random_ds):
    ds = random_ds(sizes=(50, 50), effects=[0., 0.1])
    model = ml.fit_x_learner(ds, small_forest())
    X = ds.features
    tau_c = model.effect_models[1]['control'].predict(X)
    tau_t = model.effect_models[1]['arm'].predict(X)
    assert np.allclose(model.predict_cate(X)[:, 0], (tau_c + tau_t) / 2, atol=1e-12)


## R-Learner

def test_r_targets_single_row():
    z, w = ml.r_learner_targets([1.], [1.], np.array([0.5]), np.array([0.5]))
    assert z.tolist() == [1.]
    assert w.tolist() == [0.25]


def test_r_targets_degenerate():
    with pytest.raises(FitError, match='Degenerate'):
        ml.r_learner_targets([1.], [1.], np.array([0.5]), np.array([1.]))


def test_r_learner_constant_outcome(random_ds):
    ds = random_ds(sizes=(20, 20), rate=1.)
    model = ml.fit_r_learner(ds, MEAN, plan=CrossFitPlan(k_folds=2))
    assert np.allclose(model.predict_cate(ds.features), 0., atol=1e-12)


def test_r_learner_tiny_matches_constant_oracle(tiny):
    plan = CrossFitPlan(folds=(0, 1, 0, 1, 0, 1, 0, 1))
    model = ml.fit_r_learner(tiny, MEAN, plan=plan)
    tau = model.predict_cate(tiny.features)[:, 0]
    assert np.ptp(tau) == 0.

    y = tiny.outcome.astype(float)
    w = (tiny.assignment == 1).astype(float)
    m_hat = np.empty(8)
    folds = np.array(plan.folds)
    for f in (0, 1):
        m_hat[folds == f] = y[folds != f].mean()
    e_hat = np.full(8, 0.5)
    assert tau[0] == pytest.approx(ml.fit_constant_rloss(y, w, m_hat, e_hat), abs=1e-9)
    z, weights = ml.r_learner_targets(y, w, m_hat, e_hat)
    assert tau[0] == pytest.approx(np.sum(weights * z) / np.sum(weights), abs=1e-12)


@pytest.mark.parametrize('seed', range(20))
def test_constant_rloss_oracle(seed):
    rng = np.random.default_rng(seed)
    y = (rng.random(50) < 0.4).astype(float)
    w = (rng.random(50) < 0.5).astype(float)
    m_hat = rng.uniform(0.2, 0.6, 50)
    e_hat = rng.uniform(0.3, 0.7, 50)
    z, weights = ml.r_learner_targets(y, w, m_hat, e_hat)
    closed = np.sum(weights * z) / np.sum(weights)
    assert ml.fit_constant_rloss(y, w, m_hat, e_hat) == pytest.approx(closed, abs=1e-9)
    assert ml.rloss(closed, y, w, m_hat, e_hat) <= ml.rloss(closed + 1e-3, y, w, m_hat, e_hat)


def test_r_learner_learned_propensity(random_ds):
    ds = random_ds(sizes=(60, 60), effects=[0., 0.2])
    model = ml.fit_r_learner(ds, small_forest(), propensity_mode='learned', plan=CrossFitPlan(k_folds=3))
    assert np.all(np.isfinite(model.predict_cate(ds.features)))


## Net value

def test_nv_pseudo_effect_hand_value(tiny, tiny_cost):
    mu = {0: fit_mean(tiny.features[:4], np.full(4, 0.5)), 1: fit_mean(tiny.features[4:], np.full(4, 0.5))}
    pe = ml.build_nv_pseudo_effects(tiny, mu, tiny_cost)
    _, d_arm = pe.get(1, 'arm')
    # First arm row converted: 0.8 * 1 - 1 * 0.5 - 0.01
    assert d_arm[0] == pytest.approx(0.29, abs=1e-12)
    _, d_control = pe.get(1, 'control')
    # Control row with Y=1: 0.8 * 0.5 - 1 * 1 - 0.01
    assert d_control[1] == pytest.approx(-0.61, abs=1e-12)


def test_nv_pseudo_effects_zero_cost_reduce(tiny):
    mu = ml.fit_outcome_models(tiny, MEAN, 0)
    a = ml.build_pseudo_effects(tiny, mu)
    b = ml.build_nv_pseudo_effects(tiny, mu, zero_cost(tiny))
    for key in a.entries:
        assert np.allclose(a.entries[key][1], b.entries[key][1], atol=1e-12)


def test_nv_pseudo_effects_missing_cost(tiny):
    mu = ml.fit_outcome_models(tiny, MEAN, 0)
    with pytest.raises(CostError):
        ml.build_nv_pseudo_effects(tiny, mu, CostStructure(1., {}, {}))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_pseudo_effects_nonnegative_when_arm_dominates(seed):
    # Arm rows repeat the control rows with extra conversions
    rng = np.random.default_rng(seed)
    n = 60
    X = rng.standard_normal((n, 2))
    y_c = (rng.random(n) < 0.3).astype(np.int8)
    y_c[0] = 0
    y_t = y_c | (rng.random(n) < 0.2).astype(np.int8)
    y_t[0] = 1
    ds = ExperimentDataset(np.vstack([X, X]), np.concatenate([y_c, y_t]), np.repeat([0, 1], n),
                           [GroupId(0, 'control'), GroupId(1, 't1')], 0)
    forest = ForestParams(n_trees=3, max_features=1, max_depth=4, min_samples_leaf=5, seed=seed % 1000, bootstrap=False)
    for learner in (MEAN, as_learner(forest)):
        mu = ml.fit_outcome_models(ds, learner, 0)
        for pe in (ml.build_pseudo_effects(ds, mu), ml.build_nv_pseudo_effects(ds, mu, zero_cost(ds))):
            for source in ('control', 'arm'):
                _, d = pe.get(1, source)
                assert d.mean() >= 0


def test_nv_residual_hand_value():
    y = np.array([0., 0., 1., 0.])
    m_hat = np.full(4, 0.5)
    s = np.array([0., 0., 0.2, 0.2])
    c = np.array([0., 0., 0.01, 0.01])
    r = ml.nv_r_residuals(y, m_hat, s, c, 1.)
    assert r[2] == pytest.approx(0.345, abs=1e-12)


def test_nv_residual_constant_outcome():
    r = ml.nv_r_residuals(np.ones(6), np.ones(6), np.full(6, 0.1), np.full(6, 0.02), 1.)
    assert np.allclose(r, 0., atol=1e-12)


def test_nv_x_tiny_trace(tiny, tiny_cost):
    model = ml.fit_nv_x_learner(tiny, MEAN, cost=tiny_cost)
    y_c = np.array([0, 1, 0, 0])
    y_t = np.array([1, 1, 0, 0])
    d_control = 0.8 * 0.5 - y_c - 0.01
    d_arm = 0.8 * y_t - 0.25 - 0.01
    expected = 0.5 * (d_control.mean() + d_arm.mean())
    assert np.allclose(model.predict_cate(tiny.features), expected, atol=1e-12)


def test_nv_learners_zero_cost_reduce(random_ds):
    ds = random_ds(seed=2, sizes=(60, 60, 60), effects=[0., 0.1, 0.2])
    p = small_forest(seed=3)
    plan = CrossFitPlan(k_folds=3, seed=1)
    cost = zero_cost(ds)
    x = ml.fit_x_learner(ds, p).predict_cate(ds.features)
    x_nv = ml.fit_nv_x_learner(ds, p, cost=cost).predict_cate(ds.features)
    assert np.allclose(x, x_nv, atol=1e-9)
    r = ml.fit_r_learner(ds, p, plan=plan).predict_cate(ds.features)
    r_nv = ml.fit_nv_r_learner(ds, p, plan=plan, cost=cost).predict_cate(ds.features)
    assert np.allclose(r, r_nv, atol=1e-9)


def test_nv_requires_cost(tiny):
    with pytest.raises(CostError):
        ml.fit_nv_x_learner(tiny, MEAN)
    with pytest.raises(CostError):
        ml.fit_model('r_learner', tiny, MEAN, objective='net_value')


def test_nv_negative_when_triggered_cost_exceeds_value(tiny):
    cost = CostStructure(1., {'control': 0., 't1': 0.}, {'control': 0., 't1': 1.5})
    cate = ml.fit_two_model(tiny, MEAN, cost).predict_cate(tiny.features)
    # (1 - 1.5) * 0.5 - 1 * 0.25
    assert np.allclose(cate, -0.5, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(k=st.floats(0.1, 20.), kind=st.sampled_from(['x_learner', 'r_learner']))
def test_joint_cost_scaling(k, kind):
    rng = np.random.default_rng(0)
    assignment = np.repeat([0, 1, 2], 8)
    ds = ExperimentDataset(rng.random((24, 2)), rng.integers(0, 2, 24), assignment,
                           [GroupId(0, 'control'), GroupId(1, 't1'), GroupId(2, 't2')], 0)
    cost = CostStructure(1., {'control': 0., 't1': 0.01, 't2': 0.05}, {'control': 0., 't1': 0.2, 't2': 0.1})
    plan = CrossFitPlan(k_folds=2)
    a = ml.fit_model(kind, ds, MEAN, 'net_value', plan=plan, cost=cost)
    b = ml.fit_model(kind, ds, MEAN, 'net_value', plan=plan, cost=cost.scaled(k))
    ca = a.predict_cate(ds.features)
    cb = b.predict_cate(ds.features)
    assert np.allclose(cb, k * ca, rtol=1e-9, atol=1e-12)
    assert np.array_equal(ml.recommend(a, ds.features, True, ca), ml.recommend(b, ds.features, True, cb))


## Recommend

class FixedModel:
    arms = [1, 2, 3]
    control_index = 0

    def __init__(self, cate):
        self.cate = np.atleast_2d(cate)

    def predict_cate(self, X):
        return self.cate


def test_recommend_first_max():
    assert ml.recommend(FixedModel([0.02, 0.05, 0.05]), None).tolist() == [2]


def test_recommend_all_negative():
    model = FixedModel([-0.1, -0.2, -0.05])
    assert ml.recommend(model, None, include_control=True).tolist() == [0]
    assert ml.recommend(model, None, include_control=False).tolist() == [3]


def test_recommended_scores():
    model = FixedModel([[0.1, 0.3, 0.2], [-1., -2., -3.]])
    cate = model.cate
    rec = ml.recommend(model, None, True)
    assert ml.recommended_scores(model, cate, rec).tolist() == [0.3, 0.]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([-0.1, 0., 0.05, 0.2]), min_size=3, max_size=3))
def test_recommend_tie_break_lowest(scores):
    rec = ml.recommend(FixedModel(scores), None)[0]
    assert rec == 1 + scores.index(max(scores))


def test_predict_cate_columns_follow_arms(random_ds):
    ds = random_ds(sizes=(20, 20, 20), effects=[0., 0.3, -0.2])
    model = ml.fit_two_model(ds, MEAN)
    cate = model.predict_cate(ds.features[:1])[0]
    means = [ds.outcome[ds.assignment == g].mean() for g in range(3)]
    assert cate == pytest.approx([means[1] - means[0], means[2] - means[0]], abs=1e-12)


## Pairwise

def test_pairwise_models(random_ds):
    ds = random_ds(sizes=(20, 20, 20), control=False, effects=[0., 0.2, 0.4])
    model = ml.fit_pairwise(ds, 'two_model', MEAN)
    pw = model.predict_pairwise(ds.features[:2])
    assert sorted(pw) == [(0, 1), (0, 2), (1, 2)]
    means = [ds.outcome[ds.assignment == g].mean() for g in range(3)]
    assert pw[(1, 2)][0] == pytest.approx(means[2] - means[1], abs=1e-12)


def test_pairwise_net_value_needs_every_arm_cost(random_ds):
    ds = random_ds(sizes=(20, 20, 20), control=False)
    cost = CostStructure(1., {'t2': 0.01, 't3': 0.01}, {'t2': 0., 't3': 0.})
    with pytest.raises(CostError, match='t1'):
        ml.fit_pairwise(ds, 'two_model', MEAN, 'net_value', cost=cost)
