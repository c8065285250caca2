"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

import json

import numpy as np
import pandas as pd

import uplift_mt.report as rp
import uplift_mt.evaluation as ev


def test_report_text_flattens():
    text = rp.report_text({'auuc': 0.25, 'policy': {'n': 8, 'full_match': False, 'unmatched_ci': None}})
    assert text.splitlines() == ['auuc = 0.25', 'policy.n = 8', 'policy.full_match = false',
                                 'policy.unmatched_ci = NA']


def test_write_report(tmp_path):
    stem = tmp_path / 'run_report'
    content = {'auuc': np.float64(0.1), 'counts': {'t1': np.int64(3)}}
    file_txt, file_json = rp.write_report(content, stem)
    assert json.loads((tmp_path / 'run_report.json').read_text()) == {'auuc': 0.1, 'counts': {'t1': 3}}
    assert 'counts.t1 = 3' in (tmp_path / 'run_report.txt').read_text()


def test_curve_csv(tmp_path, tiny):
    curve = ev.uplift_curve_two_arm(tiny.assignment.astype(float), tiny, n_bins=2)
    path = tmp_path / 'curve.csv'
    rp.curve_to_csv(curve, path)
    df = pd.read_csv(path)
    assert list(df.columns) == ['p', 'u', 'flagged']
    assert df['flagged'].tolist() == [1, 0]


def test_evaluation_content_without_curve(tiny):
    policy = ev.evaluate_policy(tiny.assignment, tiny)
    content = rp.evaluation_content('majority_vote', 'conversion', None, policy)
    assert 'auuc' not in content
    assert content['policy']['full_match'] is True
