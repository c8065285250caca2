"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Writing evaluation results: uplift curve CSVs and key/value reports (text
for reading, JSON for machines).
"""

import json
import logging

import numpy as np
import pandas as pd

import uplift_mt.tools as tools

lg = logging.getLogger(__name__)


## CURVES

def curve_frame(curve):
    return pd.DataFrame({'p': curve.p, 'u': curve.u, 'flagged': curve.flagged.astype(np.int64)})


def curve_to_csv(curve, file_name):
    tools.atomic_write_csv(curve_frame(curve), file_name)
    lg.info('Report: curve with {} bins written to {}'.format(curve.n_bins, file_name))


## REPORTS

def _flatten(d, prefix=''):
    items = []
    for key, val in d.items():
        name = '{}{}'.format(prefix, key)
        if isinstance(val, dict):
            items += _flatten(val, name + '.')
        else:
            items.append((name, val))
    return items


def _fmt(val):
    if val is None:
        return 'NA'
    if isinstance(val, bool):
        return 'true' if val else 'false'
    if isinstance(val, (float, np.floating)):
        return '{:.6g}'.format(val)
    return str(val)


def report_text(content):
    # One metric per line
    return ''.join('{} = {}\n'.format(key, _fmt(val)) for key, val in _flatten(content))


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError('Not JSON serializable: {!r}'.format(obj))


def write_report(content, file_stem):
    """
    Writes <file_stem>.txt and <file_stem>.json; returns both paths.
    """
    file_txt = '{}.txt'.format(file_stem)
    file_json = '{}.json'.format(file_stem)
    tools.atomic_write_text(file_txt, report_text(content))
    tools.atomic_write_text(file_json, json.dumps(content, indent=2, sort_keys=True, default=_json_default) + '\n')
    lg.info('Report: written to {} and {}'.format(file_txt, file_json))
    return file_txt, file_json


def evaluation_content(model_kind, objective, curve, policy, baselines=None):
    # curve is None for majority-vote models
    content = {'model': model_kind, 'objective': objective, 'policy': policy.to_dict()}
    if curve is not None:
        content.update({'auuc': curve.auuc, 'n_bins': curve.n_bins, 'flagged_bins': curve.n_flagged})
    if baselines is not None:
        content['fixed_groups'] = baselines
    return content
