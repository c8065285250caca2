"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Model persistence as a versioned JSON document.

Trees are stored as node arrays in the fixed field order feature,
threshold, left, right, value (feature -1 marks a leaf). Python's float
repr round-trips exactly, so a reloaded model predicts bit-identically.
"""

import json
import logging

from uplift_mt.errors import ModelFileError
from uplift_mt.dataset import GroupId, CostStructure
from uplift_mt.baselearn import ForestParams, ForestModel, RegressionTree, MeanModel
from uplift_mt.metalearn import UpliftModel, PairwiseModel, PropensityModel
import uplift_mt.tools as tools

lg = logging.getLogger(__name__)

### VARS

FORMAT_NAME = 'uplift_mt.model'
FORMAT_VERSION = 1
TREE_FIELDS = ('feature', 'threshold', 'left', 'right', 'value')


## BASE MODELS

def _base_to_dict(model):
    if isinstance(model, ForestModel):
        return {'type': 'forest', 'params': model.params.to_dict(), 'target_mean': model.target_mean,
                'n_features': model.n_features,
                'trees': [{f: getattr(t, f).tolist() for f in TREE_FIELDS} for t in model.trees]}
    if isinstance(model, MeanModel):
        return {'type': 'mean', 'value': model.value, 'n_features': model.n_features}
    raise ModelFileError('Cannot serialize base model {!r}'.format(model))


def _base_from_dict(d):
    if d['type'] == 'forest':
        n_features = d['n_features']
        trees = [RegressionTree(*[t[f] for f in TREE_FIELDS], n_features) for t in d['trees']]
        return ForestModel(trees, ForestParams(**d['params']), d['target_mean'], n_features)
    if d['type'] == 'mean':
        return MeanModel(d['value'], d['n_features'])
    raise ModelFileError('Unknown base model type {}'.format(d['type']))


## UPLIFT MODELS

def _propensity_to_dict(prop):
    return {'mode': prop.mode, 'counts': prop.counts.tolist(), 'n_features': prop.n_features,
            'models': None if prop.models is None else [_base_to_dict(m) for m in prop.models]}


def _propensity_from_dict(d):
    models = None if d['models'] is None else [_base_from_dict(m) for m in d['models']]
    return PropensityModel(d['mode'], d['counts'], models, d['n_features'])


def _uplift_to_dict(model):
    return {
        'kind': model.kind,
        'objective': model.objective,
        'groups': [g.label for g in model.group_table],
        'control_index': model.control_index,
        'n_features': model.n_features,
        'feature_names': None if model.feature_names is None else list(model.feature_names),
        'cost': None if model.cost is None else model.cost.to_dict(),
        'propensity': None if model.propensity is None else _propensity_to_dict(model.propensity),
        'outcome_models': {str(g): _base_to_dict(m) for g, m in model.outcome_models.items()},
        'effect_models': {str(a): {role: _base_to_dict(m) for role, m in parts.items()}
                          for a, parts in model.effect_models.items()},
        'meta': model.meta,
    }


def _uplift_from_dict(d):
    return UpliftModel(
        d['kind'], d['objective'],
        [GroupId(i, l) for i, l in enumerate(d['groups'])],
        d['control_index'], d['n_features'], d['feature_names'],
        propensity=None if d['propensity'] is None else _propensity_from_dict(d['propensity']),
        cost=None if d['cost'] is None else CostStructure.from_dict(d['cost']),
        outcome_models={int(g): _base_from_dict(m) for g, m in d['outcome_models'].items()},
        effect_models={int(a): {role: _base_from_dict(m) for role, m in parts.items()}
                       for a, parts in d['effect_models'].items()},
        meta=d['meta'])


def model_to_dict(model):
    if isinstance(model, PairwiseModel):
        body = {
            'kind': model.kind,
            'base_kind': model.base_kind,
            'objective': model.objective,
            'groups': [g.label for g in model.group_table],
            'n_features': model.n_features,
            'feature_names': None if model.feature_names is None else list(model.feature_names),
            'cost': None if model.cost is None else model.cost.to_dict(),
            'pairs': [{'a': a, 'b': b, 'model': _uplift_to_dict(model.pair_models[(a, b)])} for a, b in model.pairs],
            'meta': model.meta,
        }
    else:
        body = _uplift_to_dict(model)
    return dict({'format': FORMAT_NAME, 'format_version': FORMAT_VERSION}, **body)


def model_from_dict(d):
    if d.get('format') != FORMAT_NAME:
        raise ModelFileError('Not a model file (format={})'.format(d.get('format')))
    version = d.get('format_version')
    if not isinstance(version, int) or version > FORMAT_VERSION:
        raise ModelFileError('Model file format version {} is not supported (max {})'.format(version, FORMAT_VERSION))

    try:
        if d['kind'] == PairwiseModel.kind:
            groups = [GroupId(i, l) for i, l in enumerate(d['groups'])]
            pairs = {(p['a'], p['b']): _uplift_from_dict(p['model']) for p in d['pairs']}
            return PairwiseModel(d['base_kind'], d['objective'], groups, pairs, d['n_features'], d['feature_names'],
                                 None if d['cost'] is None else CostStructure.from_dict(d['cost']), d['meta'])
        return _uplift_from_dict(d)
    except (KeyError, TypeError) as err:
        raise ModelFileError('Malformed model file: {!r}'.format(err))


## FILES

def save_model(model, file_name):
    text = json.dumps(model_to_dict(model), indent=1)
    tools.atomic_write_text(file_name, text + '\n')
    lg.info('Model file: {} written to {}'.format(model.kind, file_name))


def load_model(file_name):
    try:
        with open(file_name, 'r', encoding='utf-8') as f:
            d = json.load(f)
    except FileNotFoundError:
        raise ModelFileError('Model file not found: {}'.format(file_name))
    except json.JSONDecodeError as err:
        raise ModelFileError('Model file {} is not valid JSON: {}'.format(file_name, err))
    model = model_from_dict(d)
    lg.info('Model file: {} loaded from {}'.format(model.kind, file_name))
    return model
