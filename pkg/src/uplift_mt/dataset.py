"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Experiment data model: one randomized experiment with a feature matrix,
binary conversions and group assignments. Covers ingestion from CSV,
validation, the per-group cost structure and stratified train/test splits.
"""

import logging
import configparser
from dataclasses import dataclass

import numpy as np
import pandas as pd

from uplift_mt.errors import SchemaError, ValidationError, ParseError, SplitError, CostError
import uplift_mt.tools as tools

lg = logging.getLogger(__name__)

### VARS

DEFAULT_GROUP_COL = 'group'
DEFAULT_OUTCOME_COL = 'y'
DEFAULT_CONTROL_LABEL = 'control'


### TYPES

@dataclass(frozen=True)
class GroupId:
    index: int
    label: str

    def __str__(self):
        return self.label


@dataclass(frozen=True)
class CsvSchema:
    group_col: str = DEFAULT_GROUP_COL
    outcome_col: str = DEFAULT_OUTCOME_COL
    feature_cols: tuple = None   # None -> every remaining column
    control_label: str = DEFAULT_CONTROL_LABEL


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0. < self.test_fraction < 1.:
            raise SplitError('test_fraction must lie in (0, 1), got {}'.format(self.test_fraction))


def make_group_table(labels, control_label=DEFAULT_CONTROL_LABEL):
    # Control (when present) takes index 0, remaining labels follow in sorted order
    labels = sorted(set(str(l) for l in labels))
    if control_label is not None and control_label in labels:
        labels.remove(control_label)
        labels = [control_label] + labels
        control_index = 0
    else:
        control_index = None
    return [GroupId(i, l) for i, l in enumerate(labels)], control_index


class ExperimentDataset:
    """
    Immutable view of one randomized experiment.

    features    (n, d) float64
    outcome     (n,) int8 in {0, 1}
    assignment  (n,) int64 group indices into group_table
    row_ids     (n,) int64 position of each row in the originating file
    """

    def __init__(self, features, outcome, assignment, group_table, control_index=None,
                 feature_names=None, row_ids=None):
        features = np.array(features, dtype=np.float64, copy=True)
        if features.ndim == 1:
            features = features[:, None]
        outcome = np.asarray(outcome)
        assignment = np.array(assignment, dtype=np.int64, copy=True)
        n = features.shape[0]

        if n < 1:
            raise ValidationError('Dataset has no rows')
        if outcome.shape != (n,) or assignment.shape != (n,):
            raise ValidationError('features, outcome and assignment lengths differ: {}, {}, {}'
                                  .format(n, outcome.shape, assignment.shape))
        if not np.all(np.isfinite(features)):
            bad = np.argwhere(~np.isfinite(features))[0]
            raise ValidationError('Non-finite feature value at row {}, column {}'.format(bad[0] + 1, bad[1]))
        if not np.all((outcome == 0) | (outcome == 1)):
            bad = int(np.flatnonzero((outcome != 0) & (outcome != 1))[0])
            raise ValidationError('Outcome must be 0 or 1; found {} at row {}'.format(outcome[bad], bad + 1))

        group_table = [g if isinstance(g, GroupId) else GroupId(i, str(g)) for i, g in enumerate(group_table)]
        if [g.index for g in group_table] != list(range(len(group_table))):
            raise ValidationError('Group indices must be contiguous from 0')
        if len(set(g.label for g in group_table)) != len(group_table):
            raise ValidationError('Group labels must be unique')
        if assignment.min() < 0 or assignment.max() >= len(group_table):
            raise ValidationError('Assignment references a group outside the group table')
        if control_index is not None and not 0 <= control_index < len(group_table):
            raise ValidationError('Control index {} outside the group table'.format(control_index))

        if feature_names is None:
            feature_names = ['x{}'.format(j) for j in range(features.shape[1])]
        feature_names = [str(c) for c in feature_names]
        if len(feature_names) != features.shape[1]:
            raise ValidationError('Expected {} feature names, got {}'.format(features.shape[1], len(feature_names)))

        if row_ids is None:
            row_ids = np.arange(n, dtype=np.int64)
        row_ids = np.array(row_ids, dtype=np.int64, copy=True)

        self.features = features
        self.outcome = outcome.astype(np.int8)
        self.assignment = assignment
        self.row_ids = row_ids
        for arr in (self.features, self.outcome, self.assignment, self.row_ids):
            arr.flags.writeable = False

        self.group_table = tuple(group_table)
        self.control_index = control_index
        self.feature_names = tuple(feature_names)

    def __repr__(self):
        return 'ExperimentDataset(n={}, d={}, groups={}, control={})'.format(
            self.n, self.d, [g.label for g in self.group_table], self.control_label)

    ## Shape

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def n_groups(self):
        return len(self.group_table)

    @property
    def has_control(self):
        return self.control_index is not None

    @property
    def control_label(self):
        return self.group_table[self.control_index].label if self.has_control else None

    @property
    def arm_indices(self):
        # Every non-control group, in index order
        return [g.index for g in self.group_table if g.index != self.control_index]

    @property
    def labels(self):
        return [g.label for g in self.group_table]

    def group_index(self, label):
        for g in self.group_table:
            if g.label == label:
                return g.index
        raise ValidationError('Unknown group label: {}'.format(label))

    def group_counts(self):
        return np.bincount(self.assignment, minlength=self.n_groups)

    def rows_of(self, group_index):
        return np.flatnonzero(self.assignment == group_index)

    ## Derived datasets

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return ExperimentDataset(self.features[rows], self.outcome[rows], self.assignment[rows],
                                 self.group_table, self.control_index, self.feature_names, self.row_ids[rows])

    def pair(self, a, b):
        # Groups a and b only, re-indexed 0/1 with a in the control role
        rows = np.flatnonzero((self.assignment == a) | (self.assignment == b))
        assignment = (self.assignment[rows] == b).astype(np.int64)
        table = [GroupId(0, self.group_table[a].label), GroupId(1, self.group_table[b].label)]
        return ExperimentDataset(self.features[rows], self.outcome[rows], assignment, table, 0,
                                 self.feature_names, self.row_ids[rows])

    def with_group_table(self, group_table, control_index=None):
        # Same rows, assignment re-indexed onto another table (e.g. a trained model's)
        index_of = {g.label: g.index for g in group_table}
        unknown = [l for l in self.labels if l not in index_of]
        if unknown:
            raise ValidationError('Groups {} are not in the table {}'.format(unknown, list(index_of)))
        remap = np.array([index_of[l] for l in self.labels], dtype=np.int64)
        return ExperimentDataset(self.features, self.outcome, remap[self.assignment], group_table, control_index,
                                 self.feature_names, self.row_ids)

    def fingerprint(self):
        return tools.fingerprint_arrays(self.features, self.assignment, self.outcome)

    def equals(self, other):
        return (self.group_table == other.group_table and self.control_index == other.control_index
                and self.feature_names == other.feature_names
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.outcome, other.outcome)
                and np.array_equal(self.assignment, other.assignment))


### COST STRUCTURE

class CostStructure:
    """
    Conversion value v plus per-group impression cost c_t (paid per treated
    user) and triggered cost s_t (paid per converted user). Keys are group
    labels; missing control entries default to zero.
    """

    def __init__(self, conversion_value=1., impression_cost=None, triggered_cost=None):
        self.conversion_value = float(conversion_value)
        self.impression_cost = {str(k): float(v) for k, v in (impression_cost or {}).items()}
        self.triggered_cost = {str(k): float(v) for k, v in (triggered_cost or {}).items()}

        for label, s in self.triggered_cost.items():
            if self.conversion_value - s < 0:
                lg.warning('Cost: group {} has a negative conversion margin v - s = {:.4g}'
                           .format(label, self.conversion_value - s))

    def __repr__(self):
        return 'CostStructure(v={}, impression={}, triggered={})'.format(
            self.conversion_value, self.impression_cost, self.triggered_cost)

    def arrays(self, group_table, control_index=None):
        # (c, s) aligned to group_table indices
        c = np.zeros(len(group_table))
        s = np.zeros(len(group_table))
        for g in group_table:
            missing = [name for name, table in (('impression_cost', self.impression_cost),
                                                ('triggered_cost', self.triggered_cost))
                       if g.label not in table]
            if missing and g.index != control_index:
                raise CostError('Cost structure has no {} for group {}'.format(' / '.join(missing), g.label))
            c[g.index] = self.impression_cost.get(g.label, 0.)
            s[g.index] = self.triggered_cost.get(g.label, 0.)
        return c, s

    def scaled(self, k):
        return CostStructure(self.conversion_value * k,
                             {l: v * k for l, v in self.impression_cost.items()},
                             {l: v * k for l, v in self.triggered_cost.items()})

    def is_zero(self):
        return not any(self.impression_cost.values()) and not any(self.triggered_cost.values())

    def to_dict(self):
        return {'conversion_value': self.conversion_value,
                'impression_cost': dict(self.impression_cost),
                'triggered_cost': dict(self.triggered_cost)}

    @classmethod
    def from_dict(cls, d):
        return cls(d['conversion_value'], d.get('impression_cost'), d.get('triggered_cost'))

    @classmethod
    def from_file(cls, file_name):
        cfg = configparser.ConfigParser()
        if not cfg.read(file_name, encoding='utf-8'):
            raise CostError('Cost file not found: {}'.format(file_name))
        if not cfg.has_option('VALUE', 'conversion_value'):
            raise CostError('Cost file {} needs [VALUE] conversion_value'.format(file_name))

        impression = {}
        triggered = {}
        for section in cfg.sections():
            if section == 'VALUE':
                continue
            unknown = set(cfg[section]) - {'impression_cost', 'triggered_cost'}
            if unknown:
                raise CostError('Unknown keys in cost section [{}]: {}'.format(section, ', '.join(sorted(unknown))))
            impression[section] = cfg.getfloat(section, 'impression_cost', fallback=0.)
            triggered[section] = cfg.getfloat(section, 'triggered_cost', fallback=0.)
        return cls(cfg.getfloat('VALUE', 'conversion_value'), impression, triggered)

    def to_file_str(self):
        lines = ['[VALUE]', 'conversion_value = {!r}'.format(self.conversion_value), '']
        for label in sorted(set(self.impression_cost) | set(self.triggered_cost)):
            lines += ['[{}]'.format(label),
                      'impression_cost = {!r}'.format(self.impression_cost.get(label, 0.)),
                      'triggered_cost = {!r}'.format(self.triggered_cost.get(label, 0.)), '']
        return '\n'.join(lines)


### IO

def load_csv(file_name, schema=None):
    schema = schema or CsvSchema()

    try:
        df = pd.read_csv(file_name, dtype=str, keep_default_na=False, encoding='utf-8')
    except FileNotFoundError:
        raise SchemaError('File not found: {}'.format(file_name))

    # Columns
    for col, what in ((schema.group_col, 'group'), (schema.outcome_col, 'outcome')):
        if col not in df.columns:
            raise SchemaError('Missing {} column "{}" in {}'.format(what, col, file_name))

    if schema.feature_cols is None:
        feature_cols = [c for c in df.columns if c not in (schema.group_col, schema.outcome_col)]
    else:
        feature_cols = list(schema.feature_cols)
        missing = [c for c in feature_cols if c not in df.columns]
        if missing:
            raise SchemaError('Missing feature columns in {}: {}'.format(file_name, ', '.join(missing)))
    if not feature_cols:
        raise SchemaError('No feature columns in {}'.format(file_name))

    # Outcome
    outcome_str = df[schema.outcome_col].str.strip()
    outcome_num = pd.to_numeric(outcome_str, errors='coerce')
    bad = ~outcome_num.isin([0, 1])
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ValidationError('Outcome column "{}" must be 0 or 1; found "{}" at row {}'
                              .format(schema.outcome_col, outcome_str.iloc[row], row + 1))
    outcome = outcome_num.to_numpy().astype(np.int8)

    features = _parse_features(df, feature_cols)

    # Groups
    group_labels = df[schema.group_col].str.strip()
    if (group_labels == '').any():
        row = int(np.flatnonzero((group_labels == '').to_numpy())[0])
        raise ValidationError('Empty group label at row {}'.format(row + 1))
    group_table, control_index = make_group_table(group_labels.unique(), schema.control_label)
    lookup = {g.label: g.index for g in group_table}
    assignment = group_labels.map(lookup).to_numpy(dtype=np.int64)

    ds = ExperimentDataset(features, outcome, assignment, group_table, control_index, feature_cols)
    lg.info('Dataset: loaded {} rows, {} features, groups {} from {}'
            .format(ds.n, ds.d, dict(zip(ds.labels, ds.group_counts().tolist())), file_name))
    return ds


def _parse_features(df, feature_cols):
    features = np.empty((len(df), len(feature_cols)), dtype=np.float64)
    for j, col in enumerate(feature_cols):
        raw = df[col].str.strip()
        # Python float parsing is correctly rounded, so save_csv output reads back bit-exact
        try:
            values = raw.to_numpy(dtype=object).astype(np.float64)
        except ValueError:
            values = np.array([_float_or_nan(s) for s in raw], dtype=np.float64)
        bad = ~np.isfinite(values)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ParseError('Non-numeric or missing value "{}" at row {}, column "{}"'
                             .format(raw.iloc[row], row + 1, col), row=row + 1, column=col)
        features[:, j] = values
    return features


def _float_or_nan(s):
    try:
        return float(s)
    except ValueError:
        return np.nan


def load_features(file_name, feature_cols):
    # Feature matrix only, columns in the given order; other columns are ignored
    try:
        df = pd.read_csv(file_name, dtype=str, keep_default_na=False, encoding='utf-8')
    except FileNotFoundError:
        raise SchemaError('File not found: {}'.format(file_name))
    missing = [c for c in feature_cols if c not in df.columns]
    if missing:
        raise SchemaError('Missing feature columns in {}: {}'.format(file_name, ', '.join(missing)))
    if len(df) == 0:
        raise ValidationError('No rows in {}'.format(file_name))
    return _parse_features(df, list(feature_cols))


def to_frame(ds, schema=None):
    schema = schema or CsvSchema()
    labels = np.array(ds.labels, dtype=object)
    df = pd.DataFrame(ds.features, columns=list(ds.feature_names))
    df.insert(0, schema.outcome_col, ds.outcome.astype(np.int64))
    df.insert(0, schema.group_col, labels[ds.assignment])
    return df


def save_csv(ds, file_name, schema=None):
    tools.atomic_write_csv(to_frame(ds, schema), file_name)


### SPLITS

def group_proportions(ds):
    return ds.group_counts() / ds.n


def stratified_split(ds, spec):
    rng = np.random.default_rng(spec.seed)
    train_rows = []
    test_rows = []

    for g in ds.group_table:
        rows = ds.rows_of(g.index)
        n_g = len(rows)
        if n_g == 0:
            continue
        if n_g < 2:
            raise SplitError('Group {} has {} observation; at least 2 are needed to split'.format(g.label, n_g))

        n_test = int(np.floor(n_g * spec.test_fraction + 0.5))
        n_test = min(max(n_test, 1), n_g - 1)
        perm = rng.permutation(rows)
        test_rows.append(perm[:n_test])
        train_rows.append(perm[n_test:])

    train_rows = np.sort(np.concatenate(train_rows))
    test_rows = np.sort(np.concatenate(test_rows))
    return ds.subset(train_rows), ds.subset(test_rows)
