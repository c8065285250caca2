"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Evaluation of uplift scores and treatment policies: uplift curves and AUUC
for two-arm and multi-arm designs, majority-vote recommendations for
experiments without a control, and matched/unmatched policy reports with
normal-approximation 95% intervals.
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from uplift_mt.errors import ValidationError
from uplift_mt.metalearn import recommend
import uplift_mt.tools as tools

lg = logging.getLogger(__name__)

### VARS

N_BINS = 100
TIE_MODES = ('average', 'stable')


### UPLIFT CURVE

@dataclass
class UpliftCurve:
    p: np.ndarray
    u: np.ndarray
    flagged: np.ndarray
    scaled: bool = True

    @property
    def n_bins(self):
        return self.p.size

    @property
    def n_flagged(self):
        return int(self.flagged.sum())

    @property
    def auuc(self):
        return float(self.u.mean())


def auuc(curve):
    return curve.auuc


def _prefix_sums(order, sorted_scores, cols, positions, ties):
    # Cumulative sums of each column over the sorted rows, evaluated at prefix sizes
    n = order.size
    S = np.zeros((n + 1, len(cols)))
    S[1:] = np.cumsum(np.column_stack([c[order] for c in cols]), axis=0)

    if ties == 'stable':
        return S[positions]

    # Tie blocks straddling a cut contribute pro rata
    change = np.flatnonzero(sorted_scores[1:] != sorted_scores[:-1]) + 1
    bounds = np.concatenate([[0], change, [n]])
    j = np.searchsorted(bounds, positions, side='right') - 1
    a = bounds[j]
    b = bounds[np.minimum(j + 1, bounds.size - 1)]
    inside = positions > a
    frac = np.zeros(positions.size)
    frac[inside] = (positions[inside] - a[inside]) / (b[inside] - a[inside])
    return S[a] + frac[:, None] * (S[b] - S[a])


def _curve(scores, y, treated, control, n_bins, ties, scaled):
    if ties not in TIE_MODES:
        raise ValidationError('Unknown tie mode {}; choose from {}'.format(ties, ', '.join(TIE_MODES)))
    if n_bins < 1:
        raise ValidationError('n_bins must be >= 1, got {}'.format(n_bins))
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValidationError('Scores must be finite')

    n = scores.size
    y = y.astype(np.float64)
    t = treated.astype(np.float64)
    c = control.astype(np.float64)

    order = np.argsort(-scores, kind='stable')
    k = np.arange(1, n_bins + 1)
    positions = (k * n) // n_bins
    sums = _prefix_sums(order, scores[order], [y * t, t, y * c, c], positions, ties)

    p = k / n_bins
    u = np.zeros(n_bins)
    flagged = np.zeros(n_bins, dtype=bool)
    prev = 0.
    for i in range(n_bins):
        yt, nt, yc, nc = sums[i]
        if nt <= 0 or nc <= 0:
            u[i] = prev
            flagged[i] = True
            continue
        diff = yt / nt - yc / nc
        u[i] = p[i] * diff if scaled else diff
        prev = u[i]

    if flagged.any():
        lg.warning('Uplift curve: {} of {} bins had no treated or no control rows; values carried forward'
                   .format(int(flagged.sum()), n_bins))
    return UpliftCurve(p, u, flagged, scaled)


def uplift_curve_two_arm(scores, ds, n_bins=N_BINS, ties='average', scaled=True):
    if not ds.has_control or ds.n_groups != 2:
        raise ValidationError('Two-arm curve needs a control and exactly one arm; groups are {}'.format(ds.labels))
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size != ds.n:
        raise ValidationError('Got {} scores for {} rows'.format(scores.size, ds.n))

    arm = ds.arm_indices[0]
    return _curve(scores, ds.outcome, ds.assignment == arm, ds.assignment == ds.control_index, n_bins, ties, scaled)


def uplift_curve_multi_arm(cate, recommended, ds, n_bins=N_BINS, ties='average', scaled=True):
    """
    Rows are ranked by their best-arm score, or directly by cate when it is
    a single ranking score per row. Treated rows are those whose actual arm
    is the recommended one; control rows are the control group.
    """
    if not ds.has_control:
        raise ValidationError('Multi-arm curve needs a control group')
    cate = np.asarray(cate, dtype=np.float64)
    recommended = np.asarray(recommended, dtype=np.int64)
    if cate.ndim == 1 and cate.shape != (ds.n,):
        raise ValidationError('Got {} ranking scores for {} rows'.format(cate.size, ds.n))
    if cate.ndim != 1 and cate.shape != (ds.n, len(ds.arm_indices)):
        raise ValidationError('Predictions of shape {} do not match {} rows x {} arms'
                              .format(cate.shape, ds.n, len(ds.arm_indices)))
    if recommended.shape != (ds.n,):
        raise ValidationError('Got {} recommendations for {} rows'.format(recommended.size, ds.n))

    best = cate if cate.ndim == 1 else cate.max(axis=1)
    control = ds.assignment == ds.control_index
    matched = (ds.assignment == recommended) & ~control
    return _curve(best, ds.outcome, matched, control, n_bins, ties, scaled)


def sample_ate(ds, arm=None):
    arm = ds.arm_indices[0] if arm is None else arm
    y = ds.outcome.astype(np.float64)
    t = ds.assignment == arm
    c = ds.assignment == ds.control_index
    return y[t].sum() / t.sum() - y[c].sum() / c.sum()


def model_curve(model, ds, n_bins=N_BINS, ties='average', include_control=False):
    # Two-arm curve for a single arm, multi-arm curve over recommendations otherwise
    cate = model.predict_cate(ds.features)
    if cate.shape[1] == 1:
        return uplift_curve_two_arm(cate[:, 0], ds, n_bins, ties)
    rec = recommend(model, ds.features, include_control, cate)
    return uplift_curve_multi_arm(cate, rec, ds, n_bins, ties)


### MAJORITY VOTE

def pairwise_votes(pairwise, n_groups):
    # (n, n_groups) vote counts; pair (a, b) votes b when its effect over a is positive
    pairs = list(combinations(range(n_groups), 2))
    n = np.asarray(pairwise[pairs[0]]).size
    votes = np.zeros((n, n_groups), dtype=np.int64)
    rows = np.arange(n)
    for a, b in pairs:
        tau = np.asarray(pairwise[(a, b)], dtype=np.float64).ravel()
        if tau.size != n:
            raise ValidationError('Pair {} has {} predictions, expected {}'.format((a, b), tau.size, n))
        winner = np.where(tau > 0, b, a)
        votes[rows, winner] += 1
    return votes


def majority_vote_recommend(pairwise, n_groups, seed=0):
    """
    pairwise maps every pair (a, b), a < b, to the predicted effect of b
    over a. Each pair votes for b when the effect is positive, otherwise
    for a. Vote ties are broken by a seeded uniform choice.
    """
    pairs = list(combinations(range(n_groups), 2))
    missing = [pr for pr in pairs if pr not in pairwise]
    if missing:
        raise ValidationError('Missing pairwise predictions for {}'.format(missing))

    votes = pairwise_votes(pairwise, n_groups)
    n = votes.shape[0]

    # Random keys pick among tied leaders
    keys = np.random.default_rng(seed).random((n, n_groups))
    leaders = votes == votes.max(axis=1, keepdims=True)
    return np.argmax(np.where(leaders, keys, -1.), axis=1)


def recommend_pairwise(model, X, seed=0):
    return majority_vote_recommend(model.predict_pairwise(X), len(model.group_table), seed)


### POLICY

@dataclass
class PolicyReport:
    objective: str
    n: int
    n_matched: int
    matched_mean: float
    matched_se: float
    n_unmatched: int = 0
    unmatched_mean: float = None
    unmatched_se: float = None
    difference: float = None
    difference_ci: float = None
    full_match: bool = False
    recommended_counts: dict = field(default_factory=dict)
    matched_counts: dict = field(default_factory=dict)

    @property
    def matched_ci(self):
        return tools.normal_interval(self.matched_se)

    @property
    def unmatched_ci(self):
        return None if self.unmatched_se is None else tools.normal_interval(self.unmatched_se)

    def to_dict(self):
        return {'objective': self.objective, 'n': self.n,
                'n_matched': self.n_matched, 'matched_mean': self.matched_mean,
                'matched_se': self.matched_se, 'matched_ci': self.matched_ci,
                'n_unmatched': self.n_unmatched, 'unmatched_mean': self.unmatched_mean,
                'unmatched_se': self.unmatched_se, 'unmatched_ci': self.unmatched_ci,
                'difference': self.difference, 'difference_ci': self.difference_ci,
                'full_match': self.full_match,
                'recommended_counts': dict(self.recommended_counts),
                'matched_counts': dict(self.matched_counts)}


def unit_values(ds, cost=None):
    # Y, or (v - s_W) Y - c_W under a cost structure
    y = ds.outcome.astype(np.float64)
    if cost is None:
        return y
    c, s = cost.arrays(ds.group_table, ds.control_index)
    return (cost.conversion_value - s[ds.assignment]) * y - c[ds.assignment]


def evaluate_policy(recommended, ds, cost=None):
    recommended = np.asarray(recommended, dtype=np.int64)
    if recommended.shape != (ds.n,):
        raise ValidationError('Got {} recommendations for {} rows'.format(recommended.size, ds.n))
    if recommended.min() < 0 or recommended.max() >= ds.n_groups:
        raise ValidationError('Recommendation outside the group table')

    values = unit_values(ds, cost)
    matched = recommended == ds.assignment
    if not matched.any():
        raise ValidationError('No test row was assigned to its recommended group')

    m_mean, m_se = tools.mean_se(values[matched])
    labels = ds.labels
    report = PolicyReport(
        objective='conversion' if cost is None else 'net_value',
        n=ds.n,
        n_matched=int(matched.sum()),
        matched_mean=float(m_mean),
        matched_se=float(m_se),
        recommended_counts={labels[g]: int((recommended == g).sum()) for g in range(ds.n_groups)},
        matched_counts={labels[g]: int((matched & (recommended == g)).sum()) for g in range(ds.n_groups)},
    )

    if matched.all():
        report.full_match = True
        lg.info('Policy: every row matched its recommendation; no unmatched comparison')
        return report

    u_mean, u_se = tools.mean_se(values[~matched])
    report.n_unmatched = int((~matched).sum())
    report.unmatched_mean = float(u_mean)
    report.unmatched_se = float(u_se)
    report.difference = float(m_mean - u_mean)
    report.difference_ci = float(tools.normal_interval(np.sqrt(m_se**2 + u_se**2)))
    return report


def group_values(ds, cost=None):
    # Value of sending every user to one fixed group
    values = unit_values(ds, cost)
    res = {}
    for g in ds.group_table:
        mean, se = tools.mean_se(values[ds.assignment == g.index])
        res[g.label] = {'mean': float(mean), 'se': float(se), 'ci': float(tools.normal_interval(se)),
                        'n': int((ds.assignment == g.index).sum())}
    return res
