"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Synthetic multi-arm uplift experiments.

Four feature roles are generated:
    inf_*  informative: drive the baseline conversion of every group
    upl_*  uplift: drive the treatment effect, each group uses its own subset
    mix_*  random linear combination of one uplift and one informative column
    irr_*  irrelevant: N(0, 1) noise

The baseline label is Bernoulli(sigmoid(score + b)), with score a random
linear combination of the informative columns and b calibrated so the
population conversion rate equals base_rate. Within group j the units in
the top lift fraction of that group's uplift score get Y' = +1, those in
the bottom neg_lift fraction get Y' = -1, and Y = clip(Y_base + Y', 0, 1).
The uplift score is the unit-variance projection of the group's uplift
columns plus uplift_noise times a latent N(0, 1) term, so the features
explain the lift only in part.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from uplift_mt.errors import GenSpecError
from uplift_mt.dataset import ExperimentDataset, CostStructure, make_group_table, DEFAULT_CONTROL_LABEL
import uplift_mt.tools as tools

lg = logging.getLogger(__name__)

### VARS

N_CLUSTERS = 4
ROLES = ('informative', 'uplift', 'mix', 'irrelevant')
ROLE_PREFIX = {'informative': 'inf', 'uplift': 'upl', 'mix': 'mix', 'irrelevant': 'irr'}

# Seed derivation stages
STAGE_INFORMATIVE = 1
STAGE_BASE_LABEL = 2
STAGE_UPLIFT = 3
STAGE_MIX = 4
STAGE_IRRELEVANT = 5
STAGE_SHUFFLE = 6

# Net-value simulation costs, scaled by the cost multiplier
SCENARIO_IMPRESSION_COSTS = (0., 0.01, 0.02, 0.1)
SCENARIO_TRIGGERED_COSTS = (0., 0.01, 0.1, 0.5)
COST_SCENARIOS = ('impression', 'triggered', 'both')


### SPEC

@dataclass(frozen=True)
class GroupSpec:
    label: str
    lift: float = 0.
    neg_lift: float = 0.

    def __post_init__(self):
        if not self.label:
            raise GenSpecError('Group label must not be empty')
        if self.lift < 0 or self.neg_lift < 0:
            raise GenSpecError('Group {}: lift and neg_lift must be >= 0'.format(self.label))
        if self.lift + self.neg_lift > 1:
            raise GenSpecError('Group {}: lift + neg_lift = {} exceeds 1'.format(self.label, self.lift + self.neg_lift))


@dataclass(frozen=True)
class GenSpec:
    groups: tuple
    n_per_group: int = 5000
    base_rate: float = 0.1
    n_informative: int = 5
    n_uplift: int = 3
    n_mix: int = 2
    n_irrelevant: int = 10
    uplift_noise: float = 0.5
    seed: int = 0
    control_label: str = DEFAULT_CONTROL_LABEL

    def __post_init__(self):
        object.__setattr__(self, 'groups', tuple(self.groups))
        if len(self.groups) < 2:
            raise GenSpecError('Need at least two groups, got {}'.format(len(self.groups)))
        labels = [g.label for g in self.groups]
        if len(set(labels)) != len(labels):
            raise GenSpecError('Group labels must be unique: {}'.format(labels))
        if self.n_per_group < 1:
            raise GenSpecError('n_per_group must be >= 1, got {}'.format(self.n_per_group))
        if not 0. < self.base_rate < 1.:
            raise GenSpecError('base_rate must lie in (0, 1), got {}'.format(self.base_rate))
        for name in ('n_informative', 'n_uplift', 'n_mix', 'n_irrelevant'):
            if getattr(self, name) < 0:
                raise GenSpecError('{} must be >= 0'.format(name))
        if not self.uplift_noise >= 0:
            raise GenSpecError('uplift_noise must be >= 0, got {}'.format(self.uplift_noise))
        if self.n_features == 0:
            raise GenSpecError('At least one feature column is needed')
        if self.n_uplift == 0 and any(g.lift > 0 or g.neg_lift > 0 for g in self.groups):
            raise GenSpecError('Non-zero lifts need at least one uplift feature')
        if self.n_mix > 0 and self.n_uplift == 0 and self.n_informative == 0:
            raise GenSpecError('Mix features need an uplift or informative feature to combine')

    @property
    def n_features(self):
        return self.n_informative + self.n_uplift + self.n_mix + self.n_irrelevant

    @property
    def labels(self):
        return [g.label for g in self.groups]


@dataclass
class GeneratedData:
    """
    dataset      the experiment, rows shuffled
    base_prob    (n,) baseline conversion probability
    y_base       (n,) baseline label, shared by every group
    true_prob    (n, G) counterfactual conversion probability per group
    lift         (n, G) counterfactual lift indicator per group in {-1, 0, 1}
    roles        {column name: role}
    uplift_cols  {group label: uplift columns driving that group}
    """
    dataset: ExperimentDataset
    base_prob: np.ndarray
    y_base: np.ndarray
    true_prob: np.ndarray
    lift: np.ndarray
    roles: dict
    uplift_cols: dict = field(default_factory=dict)

    @property
    def potential_outcomes(self):
        # (n, G) label each unit would show in each group
        return np.clip(self.y_base[:, None].astype(np.int16) + self.lift, 0, 1).astype(np.int8)

    @property
    def observed_prob(self):
        return self.true_prob[np.arange(self.dataset.n), self.dataset.assignment]

    @property
    def observed_lift(self):
        return self.lift[np.arange(self.dataset.n), self.dataset.assignment]


### GENERATION

def _informative(rng, n, k):
    # Gaussian clusters around hypercube vertices, randomly rotated
    if k == 0:
        return np.empty((n, 0))
    centers = rng.choice([-1., 1.], size=(N_CLUSTERS, k))
    cluster = rng.integers(0, N_CLUSTERS, size=n)
    X = centers[cluster] + rng.standard_normal((n, k))
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return X @ Q


def _lift_thresholds(score, n_pos, n_neg):
    # Cut points reproducing the in-group quantile assignment for any unit
    s = np.sort(score)
    top = s[-n_pos] if n_pos > 0 else np.inf
    bottom = s[n_neg - 1] if n_neg > 0 else -np.inf
    return top, bottom


def generate(spec):
    G = len(spec.groups)
    n_g = spec.n_per_group
    n = G * n_g
    seed = spec.seed

    group_table, control_index = make_group_table(spec.labels, spec.control_label)
    index_of = {g.label: g.index for g in group_table}
    assignment = np.repeat([index_of[g.label] for g in spec.groups], n_g)

    # Baseline conversion
    X_inf = _informative(tools.derive_rng(seed, STAGE_INFORMATIVE), n, spec.n_informative)
    rng = tools.derive_rng(seed, STAGE_BASE_LABEL)
    beta = rng.standard_normal(spec.n_informative)
    score = X_inf @ beta if spec.n_informative else np.zeros(n)
    b = tools.calibrate_intercept(score, spec.base_rate)
    base_prob = tools.sigmoid(score + b)
    y_base = (rng.random(n) < base_prob).astype(np.int8)

    # Uplift
    rng = tools.derive_rng(seed, STAGE_UPLIFT)
    X_upl = rng.standard_normal((n, spec.n_uplift))
    lift = np.zeros((n, G), dtype=np.int8)
    y_delta = np.zeros(n, dtype=np.int8)
    uplift_cols = {}
    for gs in spec.groups:
        j = index_of[gs.label]
        if spec.n_uplift == 0:
            uplift_cols[gs.label] = ()
            continue
        k = int(rng.integers(1, spec.n_uplift + 1))
        cols = np.sort(rng.choice(spec.n_uplift, size=k, replace=False))
        coef = rng.standard_normal(k)
        u = X_upl[:, cols] @ (coef / np.linalg.norm(coef)) + spec.uplift_noise * rng.standard_normal(n)
        uplift_cols[gs.label] = tuple('upl_{}'.format(c) for c in cols)

        members = np.flatnonzero(assignment == j)
        n_pos = math.ceil(gs.lift * n_g)
        n_neg = min(math.ceil(gs.neg_lift * n_g), n_g - n_pos)

        # Members by rank, exact counts
        order = members[np.argsort(-u[members], kind='stable')]
        y_delta[order[:n_pos]] = 1
        if n_neg:
            y_delta[order[n_g - n_neg:]] = -1

        # Everyone, as if assigned to j
        top, bottom = _lift_thresholds(u[members], n_pos, n_neg)
        lift[:, j] = np.where(u >= top, 1, np.where(u <= bottom, -1, 0))
        lift[members, j] = y_delta[members]

    outcome = np.clip(y_base + y_delta, 0, 1).astype(np.int8)
    true_prob = np.where(lift == 1, 1., np.where(lift == -1, 0., base_prob[:, None]))

    # Mix and irrelevant
    rng = tools.derive_rng(seed, STAGE_MIX)
    X_mix = np.empty((n, spec.n_mix))
    for m in range(spec.n_mix):
        a, c = rng.uniform(-1., 1., size=2)
        part_u = X_upl[:, rng.integers(spec.n_uplift)] if spec.n_uplift else 0.
        part_i = X_inf[:, rng.integers(spec.n_informative)] if spec.n_informative else 0.
        X_mix[:, m] = a * part_u + c * part_i
    X_irr = tools.derive_rng(seed, STAGE_IRRELEVANT).standard_normal((n, spec.n_irrelevant))

    features = np.hstack([X_inf, X_upl, X_mix, X_irr])
    roles = {}
    for role, k in zip(ROLES, (spec.n_informative, spec.n_uplift, spec.n_mix, spec.n_irrelevant)):
        for c in range(k):
            roles['{}_{}'.format(ROLE_PREFIX[role], c)] = role

    # Interleave groups
    perm = tools.derive_rng(seed, STAGE_SHUFFLE).permutation(n)
    ds = ExperimentDataset(features[perm], outcome[perm], assignment[perm], group_table, control_index, list(roles))

    lg.info('Generate: {} rows, {} features, groups {}, base rate {:.4f}, observed rate {:.4f}'
            .format(n, spec.n_features, spec.labels, spec.base_rate, outcome.mean()))
    return GeneratedData(ds, base_prob[perm], y_base[perm], true_prob[perm], lift[perm], roles, uplift_cols)


### GROUND TRUTH

def oracle_cate(generated):
    # True conversion effect of each arm vs control, columns in arm order
    ds = generated.dataset
    if not ds.has_control:
        raise GenSpecError('Oracle effects vs control need a control group')
    p = generated.true_prob
    return np.column_stack([p[:, a] - p[:, ds.control_index] for a in ds.arm_indices])


def individual_effects(generated):
    # Realized effect of each arm vs control per unit, in {-1, 0, 1}
    ds = generated.dataset
    if not ds.has_control:
        raise GenSpecError('Oracle effects vs control need a control group')
    y = generated.potential_outcomes
    return np.column_stack([y[:, a] - y[:, ds.control_index] for a in ds.arm_indices]).astype(np.int8)


def oracle_recommend(generated, rows=None):
    """
    Ground-truth ranking and arm choice. Units are ranked by their best
    individual effect; among equal effects, units that convert under control
    go last. The recommended arm reaches the best individual effect, ties
    going to the larger conditional effect and then to the lower index.

    Returns (scores, recommended group indices), restricted to rows if given.
    """
    ite = individual_effects(generated).astype(np.float64)
    cate = oracle_cate(generated)
    y_control = generated.potential_outcomes[:, generated.dataset.control_index]
    if rows is not None:
        ite, cate, y_control = ite[rows], cate[rows], y_control[rows]

    # |cate| <= 1 keeps the tie-break inside one effect level
    pick = np.argmax(ite + 0.25 * cate, axis=1)
    scores = ite.max(axis=1) - 0.5 * y_control
    return scores, np.asarray(generated.dataset.arm_indices)[pick]


def oracle_values(generated, cost=None):
    # Expected per-group value (v - s_t) P_t - c_t, or P_t without costs
    p = generated.true_prob
    if cost is None:
        return p.copy()
    ds = generated.dataset
    c, s = cost.arrays(ds.group_table, ds.control_index)
    return (cost.conversion_value - s) * p - c


def truth_frame(generated):
    ds = generated.dataset
    labels = np.array(ds.labels, dtype=object)
    df = pd.DataFrame({'row_id': ds.row_ids, 'group': labels[ds.assignment],
                       'base_prob': generated.base_prob, 'true_prob': generated.observed_prob,
                       'lift': generated.observed_lift.astype(np.int64),
                       'y_base': generated.y_base.astype(np.int64)})
    for g in ds.group_table:
        df['p_{}'.format(g.label)] = generated.true_prob[:, g.index]
    for g in ds.group_table:
        df['lift_{}'.format(g.label)] = generated.lift[:, g.index].astype(np.int64)
    return df


def roles_frame(generated):
    return pd.DataFrame({'column': list(generated.roles), 'role': list(generated.roles.values())})


### PRESETS

PRESETS = {
    'two_arm': (GroupSpec('control', 0., 0.10), GroupSpec('t1', 0.25, 0.125)),
    'four_arm': (GroupSpec('control', 0., 0.), GroupSpec('t1', 0.01, 0.005),
                 GroupSpec('t2', 0.02, 0.01), GroupSpec('t3', 0.01, 0.)),
    'no_control': (GroupSpec('t1', 0.01, 0.005), GroupSpec('t2', 0.02, 0.01), GroupSpec('t3', 0.01, 0.)),
}


def preset_spec(name, n_per_group=5000, seed=0, **kwargs):
    if name not in PRESETS:
        raise GenSpecError('Unknown preset {}; choose from {}'.format(name, ', '.join(PRESETS)))
    return GenSpec(PRESETS[name], n_per_group=n_per_group, seed=seed, **kwargs)


def parse_groups(text):
    """
    Parses 'label:lift:neglift,...'; lift and neglift may be omitted (0).
    """
    groups = []
    for item in text.split(','):
        parts = [p.strip() for p in item.strip().split(':')]
        if not parts[0] or len(parts) > 3:
            raise GenSpecError('Bad group entry "{}"; expected label:lift:neglift'.format(item))
        try:
            values = [float(p) for p in parts[1:]]
        except ValueError:
            raise GenSpecError('Bad lift values in group entry "{}"'.format(item))
        values += [0.] * (2 - len(values))
        groups.append(GroupSpec(parts[0], values[0], values[1]))
    return tuple(groups)


def cost_scenario(labels, multiplier, scenario='both', control_label=DEFAULT_CONTROL_LABEL):
    """
    Net-value simulation costs with v = 1. Arms take the scenario costs in
    order after the control (control costs are zero).
    """
    if scenario not in COST_SCENARIOS:
        raise GenSpecError('Unknown cost scenario {}; choose from {}'.format(scenario, ', '.join(COST_SCENARIOS)))
    arms = [l for l in labels if l != control_label]
    if len(arms) > len(SCENARIO_IMPRESSION_COSTS) - 1:
        raise GenSpecError('Cost scenarios cover at most {} arms'.format(len(SCENARIO_IMPRESSION_COSTS) - 1))

    impression = {}
    triggered = {}
    if control_label in labels:
        impression[control_label] = 0.
        triggered[control_label] = 0.
    for i, label in enumerate(arms, start=1):
        impression[label] = SCENARIO_IMPRESSION_COSTS[i] * multiplier if scenario in ('impression', 'both') else 0.
        triggered[label] = SCENARIO_TRIGGERED_COSTS[i] * multiplier if scenario in ('triggered', 'both') else 0.
    return CostStructure(1., impression, triggered)
