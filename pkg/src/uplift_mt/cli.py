"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Command-line front end: generate, train, predict and evaluate.

Exit codes: 0 success, 2 usage or validation error (UpliftError), 1 any
other failure.
"""

import sys
import math
import logging
import argparse
from pathlib import Path

import numpy as np
import pandas as pd

from uplift_mt.errors import UpliftError, ConfigError, FitError
from uplift_mt.config import Config
from uplift_mt.dataset import CsvSchema, SplitSpec, CostStructure, load_csv, load_features, save_csv, stratified_split
from uplift_mt.baselearn import ForestParams, ForestLearner, MeanLearner, CrossFitPlan
import uplift_mt.metalearn as ml
import uplift_mt.datagen as dg
import uplift_mt.evaluation as ev
import uplift_mt.report as rp
import uplift_mt.tools as tools
from uplift_mt.model_file import save_model, load_model
from uplift_mt import __version__

lg = logging.getLogger(__name__)

### VARS

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

# Flag dest -> config (section, key); flags left at None fall back to the config
FLAG_CONFIG = {
    'seed': ('GENERAL', 'seed'),
    'control_label': ('GENERAL', 'control_label'),
    'learner': ('FOREST', 'learner'),
    'n_trees': ('FOREST', 'n_trees'),
    'max_features': ('FOREST', 'max_features'),
    'max_depth': ('FOREST', 'max_depth'),
    'min_samples_leaf': ('FOREST', 'min_samples_leaf'),
    'bootstrap': ('FOREST', 'bootstrap'),
    'n_jobs': ('FOREST', 'n_jobs'),
    'model': ('METALEARN', 'model'),
    'objective': ('METALEARN', 'objective'),
    'propensity': ('METALEARN', 'propensity'),
    'k_folds': ('METALEARN', 'k_folds'),
    'include_control': ('METALEARN', 'include_control'),
    'bins': ('EVAL', 'bins'),
    'ties': ('EVAL', 'ties'),
    'top_fraction': ('EVAL', 'top_fraction'),
    'validation_fraction': ('EVAL', 'validation_fraction'),
    'preset': ('GENERATE', 'preset'),
    'groups': ('GENERATE', 'groups'),
    'n': ('GENERATE', 'n'),
    'base_rate': ('GENERATE', 'base_rate'),
    'n_informative': ('GENERATE', 'n_informative'),
    'n_uplift': ('GENERATE', 'n_uplift'),
    'n_mix': ('GENERATE', 'n_mix'),
    'n_irrelevant': ('GENERATE', 'n_irrelevant'),
    'uplift_noise': ('GENERATE', 'uplift_noise'),
}


## PARSER

def _add_common(p):
    p.add_argument('--config', type=str, default=None, help='INI file overriding the defaults')
    p.add_argument('--seed', type=int, default=None, help='Master seed')
    p.add_argument('--control-label', dest='control_label', type=str, default=None, help='Label of the control group')
    p.add_argument('--group-col', dest='group_col', type=str, default='group', help='Group column name')
    p.add_argument('--outcome-col', dest='outcome_col', type=str, default='y', help='Outcome column name')
    p.add_argument('-v', '--verbose', action='store_true', help='Debug logging')


def _add_forest(p):
    p.add_argument('--learner', choices=['forest', 'mean'], default=None, help='Base learner')
    p.add_argument('--n-trees', dest='n_trees', type=int, default=None)
    p.add_argument('--max-features', dest='max_features', type=int, default=None)
    p.add_argument('--max-depth', dest='max_depth', type=int, default=None)
    p.add_argument('--min-samples-leaf', dest='min_samples_leaf', type=int, default=None)
    p.add_argument('--bootstrap', action=argparse.BooleanOptionalAction, default=None)
    p.add_argument('--n-jobs', dest='n_jobs', type=int, default=None, help='Worker processes per forest')


def _add_policy(p):
    p.add_argument('--include-control', dest='include_control', action=argparse.BooleanOptionalAction, default=None,
                   help='Recommend control when every arm effect is negative (default: on for net_value)')
    p.add_argument('--cost', type=str, default=None, help='Cost INI file')


def build_parser():
    parser = argparse.ArgumentParser(prog='uplift-mt', description='Multi-treatment uplift modeling')
    parser.add_argument('--version', action='version', version='%(prog)s {}'.format(__version__))
    sub = parser.add_subparsers(dest='cmd', required=True)

    # generate
    p_gen = sub.add_parser('generate', help='Write a synthetic experiment and its ground truth')
    _add_common(p_gen)
    p_gen.add_argument('--output', type=str, required=True, help='Dataset CSV')
    p_gen.add_argument('--preset', choices=sorted(dg.PRESETS), default=None, help='Table-driven design')
    p_gen.add_argument('--groups', type=str, default=None, help='label:lift:neglift,...')
    p_gen.add_argument('--n', type=int, default=None, help='Rows per group')
    p_gen.add_argument('--base-rate', dest='base_rate', type=float, default=None)
    p_gen.add_argument('--n-informative', dest='n_informative', type=int, default=None)
    p_gen.add_argument('--n-uplift', dest='n_uplift', type=int, default=None)
    p_gen.add_argument('--n-mix', dest='n_mix', type=int, default=None)
    p_gen.add_argument('--n-irrelevant', dest='n_irrelevant', type=int, default=None)
    p_gen.add_argument('--uplift-noise', dest='uplift_noise', type=float, default=None,
                       help='Scale of the latent term in the uplift score')

    # train
    p_train = sub.add_parser('train', help='Fit an uplift model and write a model file')
    _add_common(p_train)
    _add_forest(p_train)
    p_train.add_argument('--input', type=str, required=True, help='Training CSV')
    p_train.add_argument('--output', type=str, required=True, help='Model file')
    p_train.add_argument('--model', choices=list(ml.KINDS), default=None)
    p_train.add_argument('--objective', choices=list(ml.OBJECTIVES), default=None)
    p_train.add_argument('--propensity', choices=list(ml.PROPENSITY_MODES), default=None)
    p_train.add_argument('--k-folds', dest='k_folds', type=int, default=None, help='Cross-fitting folds (R-Learner)')
    p_train.add_argument('--cost', type=str, default=None, help='Cost INI file')
    p_train.add_argument('--select', action='store_true', help='Fit every model kind, keep the best validation AUUC')
    p_train.add_argument('--validation-fraction', dest='validation_fraction', type=float, default=None)
    p_train.add_argument('--bins', type=int, default=None)
    p_train.add_argument('--ties', choices=list(ev.TIE_MODES), default=None)
    p_train.add_argument('--include-control', dest='include_control', action=argparse.BooleanOptionalAction,
                         default=None)

    # predict
    p_pred = sub.add_parser('predict', help='Score a feature CSV')
    _add_common(p_pred)
    p_pred.add_argument('--input', type=str, required=True, help='Feature CSV')
    p_pred.add_argument('--model-file', dest='model_file', type=str, required=True)
    p_pred.add_argument('--output', type=str, required=True, help='Scores CSV')
    p_pred.add_argument('--top-fraction', dest='top_fraction', type=float, default=None,
                        help='Keep only the top fraction by recommended score')
    p_pred.add_argument('--include-control', dest='include_control', action=argparse.BooleanOptionalAction,
                        default=None)

    # evaluate
    p_eval = sub.add_parser('evaluate', help='Uplift curve, AUUC and policy report on a labeled CSV')
    _add_common(p_eval)
    _add_policy(p_eval)
    p_eval.add_argument('--input', type=str, required=True, help='Labeled test CSV')
    p_eval.add_argument('--model-file', dest='model_file', type=str, required=True)
    p_eval.add_argument('--output', type=str, required=True, help='Curve CSV; the report goes next to it')
    p_eval.add_argument('--bins', type=int, default=None)
    p_eval.add_argument('--ties', choices=list(ev.TIE_MODES), default=None)

    return parser


## CONFIG

def make_config(args):
    cfg = Config(_resolve(args.config) if args.config else None)
    for dest, (section, key) in FLAG_CONFIG.items():
        val = getattr(args, dest, None)
        if val is not None:
            cfg.set(section, key, val)
    return cfg


def _resolve(path):
    return Path(path).expanduser().resolve()


def _stem_path(path, suffix):
    return path.with_name('{}{}'.format(path.stem, suffix))


def make_learner(cfg):
    name = cfg.read('FOREST', 'learner')
    if name == 'mean':
        return MeanLearner()
    if name != 'forest':
        raise ConfigError('Unknown learner "{}"; choose forest or mean'.format(name))
    params = ForestParams(n_trees=cfg.read('FOREST', 'n_trees', int),
                          max_features=cfg.read('FOREST', 'max_features', int),
                          max_depth=cfg.read('FOREST', 'max_depth', int),
                          min_samples_leaf=cfg.read('FOREST', 'min_samples_leaf', int),
                          seed=cfg.read('GENERAL', 'seed', int),
                          bootstrap=cfg.read('FOREST', 'bootstrap', bool),
                          n_jobs=cfg.read('FOREST', 'n_jobs', int))
    return ForestLearner(params)


def include_control_for(cfg, objective):
    raw = cfg.read('METALEARN', 'include_control').lower()
    if raw == 'auto':
        return objective == 'net_value'
    return cfg.read('METALEARN', 'include_control', bool)


def _schema(args, cfg, feature_cols=None, control_label=None):
    if control_label is None:
        control_label = cfg.read('GENERAL', 'control_label')
    return CsvSchema(args.group_col, args.outcome_col, feature_cols, control_label)


def _cost(path):
    return None if path is None else CostStructure.from_file(_resolve(path))


## COMMANDS

def cmd_generate(args, cfg):
    out = _resolve(args.output)
    seed = cfg.read('GENERAL', 'seed', int)
    counts = {'n_per_group': cfg.read('GENERATE', 'n', int),
              'base_rate': cfg.read('GENERATE', 'base_rate', float),
              'n_informative': cfg.read('GENERATE', 'n_informative', int),
              'n_uplift': cfg.read('GENERATE', 'n_uplift', int),
              'n_mix': cfg.read('GENERATE', 'n_mix', int),
              'n_irrelevant': cfg.read('GENERATE', 'n_irrelevant', int),
              'uplift_noise': cfg.read('GENERATE', 'uplift_noise', float)}

    preset = cfg.read('GENERATE', 'preset')
    if preset:
        spec = dg.preset_spec(preset, seed=seed, **counts)
    else:
        groups = dg.parse_groups(cfg.read('GENERATE', 'groups'))
        spec = dg.GenSpec(groups, seed=seed, control_label=cfg.read('GENERAL', 'control_label'), **counts)

    gen = dg.generate(spec)
    ds = gen.dataset
    save_csv(ds, out, _schema(args, cfg))
    tools.atomic_write_csv(dg.truth_frame(gen), _stem_path(out, '_truth.csv'))
    tools.atomic_write_csv(dg.roles_frame(gen), _stem_path(out, '_roles.csv'))

    print('n={} d={}'.format(ds.n, ds.d))
    for label, count in zip(ds.labels, ds.group_counts()):
        print('  {}: {}'.format(label, count))
    return 0


def _fit(kind, ds, learner, cfg, cost):
    objective = cfg.read('METALEARN', 'objective')
    propensity = cfg.read('METALEARN', 'propensity')
    plan = CrossFitPlan(cfg.read('METALEARN', 'k_folds', int), cfg.read('GENERAL', 'seed', int))
    if ds.has_control:
        return ml.fit_model(kind, ds, learner, objective, propensity, plan, cost)
    lg.info('Train: no control group {}; fitting pairwise models for majority vote'.format(ds.labels))
    return ml.fit_pairwise(ds, kind, learner, objective, propensity, plan, cost)


def cmd_train(args, cfg):
    ds = load_csv(_resolve(args.input), _schema(args, cfg))
    cost = _cost(args.cost)
    learner = make_learner(cfg)
    objective = cfg.read('METALEARN', 'objective')
    if objective == 'net_value' and cost is None:
        raise ConfigError('Objective net_value needs --cost')

    if args.select:
        if not ds.has_control:
            raise FitError('--select needs a control group')
        spec = SplitSpec(cfg.read('EVAL', 'validation_fraction', float), cfg.read('GENERAL', 'seed', int))
        sub_train, valid = stratified_split(ds, spec)
        n_bins = cfg.read('EVAL', 'bins', int)
        ties = cfg.read('EVAL', 'ties')
        include_control = include_control_for(cfg, objective)

        scores = {}
        for kind in ml.KINDS:
            model = _fit(kind, sub_train, learner, cfg, cost)
            scores[kind] = ev.model_curve(model, valid, n_bins, ties, include_control).auuc
            print('{}: validation AUUC = {:.6f}'.format(kind, scores[kind]))
        best = max(ml.KINDS, key=lambda k: scores[k])
        print('selected: {}'.format(best))
        lg.info('Train: selected {} (validation AUUC {:.6f})'.format(best, scores[best]))
        model = _fit(best, ds, learner, cfg, cost)
        model.meta['selection'] = scores
    else:
        model = _fit(cfg.read('METALEARN', 'model'), ds, learner, cfg, cost)

    save_model(model, _resolve(args.output))
    return 0


def top_fraction_rows(scores, q):
    if not 0. < q <= 1.:
        raise ConfigError('top fraction must lie in (0, 1], got {}'.format(q))
    n = scores.size
    keep = max(1, int(math.floor(q * n + 0.5)))
    return np.argsort(-scores, kind='stable')[:keep]


def prediction_frame(model, X, include_control, seed=0):
    labels = np.array([g.label for g in model.group_table], dtype=object)
    df = pd.DataFrame({'row_id': np.arange(X.shape[0])})

    if isinstance(model, ml.PairwiseModel):
        pw = model.predict_pairwise(X)
        for (a, b), tau in pw.items():
            df['pair_{}_vs_{}'.format(labels[b], labels[a])] = tau
        votes = ev.pairwise_votes(pw, len(labels))
        rec = ev.majority_vote_recommend(pw, len(labels), seed)
        score = votes[np.arange(X.shape[0]), rec].astype(np.float64)
    else:
        cate = model.predict_cate(X)
        for j, label in enumerate(model.arm_labels):
            df['cate_{}'.format(label)] = cate[:, j]
        rec = ml.recommend(model, X, include_control, cate)
        score = ml.recommended_scores(model, cate, rec)

    df['recommended'] = labels[rec]
    df['recommended_score'] = score
    return df


def cmd_predict(args, cfg):
    model = load_model(_resolve(args.model_file))
    X = load_features(_resolve(args.input), model.feature_names)
    include_control = include_control_for(cfg, model.objective)
    df = prediction_frame(model, X, include_control, cfg.read('GENERAL', 'seed', int))

    q = cfg.read('EVAL', 'top_fraction', float)
    if q < 1.:
        df = df.iloc[top_fraction_rows(df['recommended_score'].to_numpy(), q)]

    tools.atomic_write_csv(df, _resolve(args.output))
    lg.info('Predict: {} rows written'.format(len(df)))
    return 0


def cmd_evaluate(args, cfg):
    model = load_model(_resolve(args.model_file))
    control_label = model.group_table[model.control_index].label if model.control_index is not None else None
    schema = _schema(args, cfg, model.feature_names, control_label)
    ds = load_csv(_resolve(args.input), schema).with_group_table(model.group_table, model.control_index)

    cost = _cost(args.cost) or model.cost
    include_control = include_control_for(cfg, model.objective)
    n_bins = cfg.read('EVAL', 'bins', int)
    ties = cfg.read('EVAL', 'ties')
    out = _resolve(args.output)

    if isinstance(model, ml.PairwiseModel):
        rec = ev.recommend_pairwise(model, ds.features, cfg.read('GENERAL', 'seed', int))
        curve = None
        lg.warning('Evaluate: no control group, uplift curve skipped')
    else:
        curve = ev.model_curve(model, ds, n_bins, ties, include_control)
        rp.curve_to_csv(curve, out)
        rec = ml.recommend(model, ds.features, include_control)

    policy = ev.evaluate_policy(rec, ds, cost)
    content = rp.evaluation_content(model.kind, model.objective, curve, policy, ev.group_values(ds, cost))
    if curve is not None:
        print('AUUC = {:.6f}'.format(curve.auuc))
    rp.write_report(content, _stem_path(out, '_report'))

    print('policy matched mean = {:.6f} +- {:.6f} (n={})'.format(policy.matched_mean, policy.matched_ci, policy.n_matched))
    if not policy.full_match:
        print('policy difference = {:.6f} +- {:.6f}'.format(policy.difference, policy.difference_ci))
    return 0


COMMANDS = {'generate': cmd_generate, 'train': cmd_train, 'predict': cmd_predict, 'evaluate': cmd_evaluate}


## MAIN

def setup_logging(verbose=False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, stream=sys.stderr)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else 2

    setup_logging(args.verbose)
    try:
        cfg = make_config(args)
        if cfg.read('GENERAL', 'verbose', bool):
            logging.getLogger().setLevel(logging.DEBUG)
        lg.info('{}: start'.format(args.cmd))
        code = COMMANDS[args.cmd](args, cfg)
        lg.info('{}: done'.format(args.cmd))
        return code
    except UpliftError as err:
        print('Error: {}'.format(err), file=sys.stderr)
        return 2
    except Exception:
        lg.exception('{}: internal error'.format(args.cmd))
        return 1
