"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

__version__ = '1.0.0'

from .errors import UpliftError
from .dataset import (GroupId, CsvSchema, SplitSpec, ExperimentDataset, CostStructure,
                      load_csv, save_csv, group_proportions, stratified_split)
from .baselearn import ForestParams, CrossFitPlan, fit_forest, crossfit_predict
from .metalearn import (UpliftModel, PairwiseModel, fit_two_model, fit_x_learner, fit_r_learner,
                        fit_nv_x_learner, fit_nv_r_learner, fit_pairwise, predict_cate, recommend)
from .datagen import GroupSpec, GenSpec, generate, preset_spec, cost_scenario
from .evaluation import (UpliftCurve, uplift_curve_two_arm, uplift_curve_multi_arm, auuc,
                         majority_vote_recommend, evaluate_policy)
from .model_file import save_model, load_model
