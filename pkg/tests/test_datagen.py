"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

import math

import numpy as np
import pytest

from uplift_mt.errors import GenSpecError
import uplift_mt.datagen as dg


def spec(groups, n=2000, seed=0, **kw):
    return dg.GenSpec(tuple(dg.GroupSpec(*g) for g in groups), n_per_group=n, seed=seed, **kw)


TWO_ARM = (('control', 0., 0.1), ('t1', 0.25, 0.125))


def test_shape_and_roles():
    gen = dg.generate(spec(TWO_ARM, n=100, n_informative=5, n_uplift=3, n_mix=2, n_irrelevant=10))
    ds = gen.dataset
    assert ds.d == 20
    assert ds.n == 200
    roles = list(gen.roles.values())
    assert [roles.count(r) for r in dg.ROLES] == [5, 3, 2, 10]
    assert list(gen.roles) == list(ds.feature_names)
    assert ds.feature_names[0] == 'inf_0' and ds.feature_names[-1] == 'irr_9'


def test_deterministic():
    a = dg.generate(spec(TWO_ARM, n=300, seed=5))
    b = dg.generate(spec(TWO_ARM, n=300, seed=5))
    assert a.dataset.equals(b.dataset)
    assert np.array_equal(a.true_prob, b.true_prob)
    c = dg.generate(spec(TWO_ARM, n=300, seed=6))
    assert not np.array_equal(a.dataset.features, c.dataset.features)


def test_lift_counts_exact():
    gen = dg.generate(spec(TWO_ARM, n=1000, seed=1))
    ds = gen.dataset
    lift = gen.observed_lift
    for label, up, down in TWO_ARM:
        rows = ds.assignment == ds.group_index(label)
        assert (lift[rows] == 1).sum() == math.ceil(up * 1000)
        assert (lift[rows] == -1).sum() == math.ceil(down * 1000)


def test_clipping_rule():
    gen = dg.generate(spec(TWO_ARM, n=1000, seed=2))
    y = gen.dataset.outcome
    lift = gen.observed_lift
    assert np.all(y[lift == 1] == 1)
    assert np.all(y[lift == -1] == 0)


def test_counterfactual_lift_matches_members():
    gen = dg.generate(spec(TWO_ARM, n=500, seed=3))
    ds = gen.dataset
    t1 = ds.group_index('t1')
    rows = ds.assignment == t1
    assert np.array_equal(gen.lift[rows, t1], gen.observed_lift[rows])
    # Non-members fall on the same quantile rule, at roughly the same rates
    others = gen.lift[~rows, t1]
    assert abs((others == 1).mean() - 0.25) < 0.06


def test_oracle_cate():
    gen = dg.generate(spec(TWO_ARM, n=200, seed=4))
    tau = dg.oracle_cate(gen)
    assert tau.shape == (400, 1)
    assert np.all((tau >= -1) & (tau <= 1))
    assert np.array_equal(tau[:, 0], gen.true_prob[:, 1] - gen.true_prob[:, 0])


def test_oracle_needs_control():
    gen = dg.generate(dg.preset_spec('no_control', n_per_group=50))
    with pytest.raises(GenSpecError):
        dg.oracle_cate(gen)


def test_zero_lift_groups_agree():
    groups = (('control', 0., 0.), ('t1', 0., 0.), ('t2', 0., 0.))
    n = 2000
    for seed in range(20):
        gen = dg.generate(spec(groups, n=n, seed=seed, base_rate=0.2))
        ds = gen.dataset
        means = [ds.outcome[ds.assignment == g].mean() for g in range(3)]
        se = math.sqrt(2 * 0.2 * 0.8 / n)
        assert abs(means[1] - means[0]) < 4 * se
        assert abs(means[2] - means[0]) < 4 * se


def test_base_rate_calibrated():
    gen = dg.generate(spec((('control', 0., 0.), ('t1', 0., 0.)), n=5000, base_rate=0.1))
    assert gen.base_prob.mean() == pytest.approx(0.1, abs=1e-9)


def test_positive_lift_ate():
    groups = (('control', 0., 0.), ('t1', 0.25, 0.125))
    n = 4000
    gen = dg.generate(spec(groups, n=n, seed=8, base_rate=0.05))
    ds = gen.dataset
    y = ds.outcome
    ate = y[ds.assignment == 1].mean() - y[ds.assignment == 0].mean()
    # Expected from the counterfactual truth on the arm's own rows
    expected = gen.observed_prob[ds.assignment == 1].mean() - gen.base_prob[ds.assignment == 0].mean()
    se = math.sqrt(0.3 * 0.7 / n + 0.05 * 0.95 / n)
    assert abs(ate - expected) < 4 * se
    assert ate > 0.1


def test_irrelevant_independent():
    gen = dg.generate(spec(TWO_ARM, n=3000, seed=9, n_irrelevant=4))
    ds = gen.dataset
    y = ds.outcome.astype(float)
    bound = 4 / math.sqrt(ds.n)
    for j, name in enumerate(ds.feature_names):
        if gen.roles[name] == 'irrelevant':
            assert abs(np.corrcoef(ds.features[:, j], y)[0, 1]) < bound


def test_informative_drive_outcome():
    gen = dg.generate(spec((('control', 0., 0.), ('t1', 0., 0.)), n=3000, seed=10, base_rate=0.3))
    ds = gen.dataset
    y = ds.outcome.astype(float)
    inf = [j for j, name in enumerate(ds.feature_names) if gen.roles[name] == 'informative']
    corr = max(abs(np.corrcoef(ds.features[:, j], y)[0, 1]) for j in inf)
    assert corr > 0.05


def test_truth_frames():
    gen = dg.generate(spec(TWO_ARM, n=50))
    truth = dg.truth_frame(gen)
    assert list(truth.columns[:5]) == ['row_id', 'group', 'base_prob', 'true_prob', 'lift']
    assert 'p_t1' in truth.columns and 'lift_control' in truth.columns
    assert np.array_equal(truth['y_base'].to_numpy(), gen.y_base)
    roles = dg.roles_frame(gen)
    assert len(roles) == gen.dataset.d


## Specs

def test_invalid_lifts():
    with pytest.raises(GenSpecError, match='t1'):
        dg.GroupSpec('t1', 0.7, 0.5)
    with pytest.raises(GenSpecError):
        dg.GroupSpec('t1', -0.1, 0.)


def test_invalid_base_rate():
    with pytest.raises(GenSpecError):
        spec(TWO_ARM, base_rate=1.)


def test_lift_needs_uplift_features():
    with pytest.raises(GenSpecError):
        spec(TWO_ARM, n_uplift=0)


def test_parse_groups():
    groups = dg.parse_groups('control:0:0,t1:0.01:0.005, t2:0.02')
    assert groups == (dg.GroupSpec('control', 0., 0.), dg.GroupSpec('t1', 0.01, 0.005), dg.GroupSpec('t2', 0.02, 0.))
    with pytest.raises(GenSpecError):
        dg.parse_groups('t1:x:0')


@pytest.mark.parametrize('name, n_groups, control', [
    ('two_arm', 2, True), ('four_arm', 4, True), ('no_control', 3, False)])
def test_presets(name, n_groups, control):
    s = dg.preset_spec(name, n_per_group=10)
    assert len(s.groups) == n_groups
    gen = dg.generate(s)
    assert gen.dataset.has_control == control


def test_cost_scenarios():
    labels = ['control', 't1', 't2', 't3']
    both = dg.cost_scenario(labels, 3, 'both')
    assert both.impression_cost['t3'] == pytest.approx(0.3)
    assert both.triggered_cost['t2'] == pytest.approx(0.3)
    assert both.impression_cost['control'] == 0.

    imp = dg.cost_scenario(labels, 5, 'impression')
    assert imp.impression_cost['t1'] == pytest.approx(0.05)
    assert all(v == 0. for v in imp.triggered_cost.values())

    trig = dg.cost_scenario(labels, 5, 'triggered')
    assert trig.triggered_cost['t3'] == pytest.approx(2.5)
    assert all(v == 0. for v in trig.impression_cost.values())

    assert dg.cost_scenario(labels, 0, 'both').is_zero()
    with pytest.raises(GenSpecError):
        dg.cost_scenario(labels, 1, 'monthly')


def test_oracle_values():
    gen = dg.generate(spec(TWO_ARM, n=100, seed=11))
    assert np.array_equal(dg.oracle_values(gen), gen.true_prob)
    labels = gen.dataset.labels
    cost = dg.cost_scenario(labels, 1, 'both')
    values = dg.oracle_values(gen, cost)
    # t1: (1 - 0.01) p - 0.01, control keeps p
    assert np.allclose(values[:, 1], 0.99 * gen.true_prob[:, 1] - 0.01, atol=1e-12)
    assert np.array_equal(values[:, 0], gen.true_prob[:, 0])


## Uplift noise and individual effects

def test_noise_free_lift_follows_uplift_column():
    groups = (('control', 0., 0.), ('t1', 0.1, 0.05))
    n = 1000
    for noise, exact in ((0., True), (1., False)):
        gen = dg.generate(spec(groups, n=n, seed=12, n_uplift=1, uplift_noise=noise))
        ds = gen.dataset
        rows = np.flatnonzero(ds.assignment == 1)
        x = ds.features[rows, ds.feature_names.index('upl_0')]
        lifted = set(rows[gen.observed_lift[rows] == 1])
        ranked = rows[np.argsort(x)]
        extremes = (set(ranked[:100]), set(ranked[-100:]))
        assert (lifted in extremes) == exact


def test_invalid_uplift_noise():
    with pytest.raises(GenSpecError, match='uplift_noise'):
        spec(TWO_ARM, uplift_noise=-0.1)


def test_potential_outcomes_match_observed():
    gen = dg.generate(dg.preset_spec('four_arm', n_per_group=500, seed=13))
    ds = gen.dataset
    y = gen.potential_outcomes
    assert y.shape == (ds.n, 4)
    assert np.array_equal(y[np.arange(ds.n), ds.assignment], ds.outcome)
    no_lift = gen.lift == 0
    assert np.all(y[no_lift] == np.broadcast_to(gen.y_base[:, None], y.shape)[no_lift])


def test_individual_effects():
    gen = dg.generate(dg.preset_spec('four_arm', n_per_group=500, seed=14))
    ds = gen.dataset
    ite = dg.individual_effects(gen)
    assert ite.shape == (ds.n, 3)
    assert set(np.unique(ite)) <= {-1, 0, 1}
    # Positive effects only where the arm lifts a unit that would not convert otherwise
    for j, a in enumerate(ds.arm_indices):
        up = ite[:, j] == 1
        assert np.all(gen.lift[up, a] == 1) and np.all(gen.y_base[up] == 0)


def test_oracle_recommend():
    gen = dg.generate(dg.preset_spec('four_arm', n_per_group=500, seed=15))
    ds = gen.dataset
    ite = dg.individual_effects(gen)
    scores, rec = dg.oracle_recommend(gen)
    arm_col = {a: j for j, a in enumerate(ds.arm_indices)}
    picked = ite[np.arange(ds.n), [arm_col[r] for r in rec]]
    assert np.array_equal(picked, ite.max(axis=1))
    # Ranked by best effect first, control converters last within a level
    y_control = gen.potential_outcomes[:, ds.control_index]
    assert np.array_equal(scores, ite.max(axis=1) - 0.5 * y_control)

    rows = np.arange(0, ds.n, 3)
    sub_scores, sub_rec = dg.oracle_recommend(gen, rows)
    assert np.array_equal(sub_scores, scores[rows])
    assert np.array_equal(sub_rec, rec[rows])


def test_oracle_recommend_prefers_larger_conditional_effect():
    gen = dg.generate(dg.preset_spec('four_arm', n_per_group=500, seed=16))
    ite = dg.individual_effects(gen)
    cate = dg.oracle_cate(gen)
    _, rec = dg.oracle_recommend(gen)
    arms = np.asarray(gen.dataset.arm_indices)
    for i in np.flatnonzero(ite.max(axis=1) == 0)[:200]:
        best = np.flatnonzero(ite[i] == 0)
        assert rec[i] == arms[best[np.argmax(cate[i, best])]]
