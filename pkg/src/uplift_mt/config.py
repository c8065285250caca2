"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Run configuration: an INI template of defaults, optionally overridden by a
--config file, itself overridden by command-line flags.
"""

import logging
import configparser

from uplift_mt.errors import ConfigError

lg = logging.getLogger(__name__)

### VARS

CFG_DEFAULT_STR = '''
[GENERAL]
seed = 0
control_label = control
verbose = False

[FOREST]
learner = forest
n_trees = 100
max_features = 8
max_depth = 10
min_samples_leaf = 100
bootstrap = True
n_jobs = 1

[METALEARN]
model = x_learner
objective = conversion
propensity = empirical
k_folds = 5
include_control = auto

[EVAL]
bins = 100
ties = average
top_fraction = 1.0
validation_fraction = 0.3

[GENERATE]
preset =
groups = control:0:0,t1:0.25:0.125
n = 5000
base_rate = 0.1
n_informative = 5
n_uplift = 3
n_mix = 2
n_irrelevant = 10
uplift_noise = 0.5
'''

BOOL_VALUES = {'true': True, 'yes': True, 'on': True, '1': True,
               'false': False, 'no': False, 'off': False, '0': False}


class Config:

    def __init__(self, file_name=None):
        self.parser = configparser.ConfigParser(interpolation=None)
        self.parser.read_string(CFG_DEFAULT_STR)
        if file_name is not None:
            self.merge_file(file_name)

    def merge_file(self, file_name):
        user = configparser.ConfigParser(interpolation=None)
        try:
            with open(file_name, 'r', encoding='utf-8') as f:
                user.read_file(f)
        except FileNotFoundError:
            raise ConfigError('Config file not found: {}'.format(file_name))
        except configparser.Error as err:
            raise ConfigError('Config file {} could not be parsed: {}'.format(file_name, err))

        for section in user.sections():
            if not self.parser.has_section(section):
                raise ConfigError('Unknown config section [{}] in {}'.format(section, file_name))
            for key, val in user.items(section, raw=True):
                if not self.parser.has_option(section, key):
                    raise ConfigError('Unknown config key "{}" in section [{}] of {}'.format(key, section, file_name))
                self.parser.set(section, key, val)
        lg.info('Config: merged {}'.format(file_name))

    def set(self, section, key, val):
        if not self.parser.has_option(section, key):
            raise ConfigError('Unknown config key [{}] {}'.format(section, key))
        self.parser.set(section, key, str(val))

    def read(self, section, key, type_=str):
        if not self.parser.has_option(section, key):
            raise ConfigError('Unknown config key [{}] {}'.format(section, key))
        raw = self.parser.get(section, key).strip()
        if type_ is bool:
            if raw.lower() not in BOOL_VALUES:
                raise ConfigError('[{}] {} must be a boolean, got "{}"'.format(section, key, raw))
            return BOOL_VALUES[raw.lower()]
        try:
            return type_(raw)
        except ValueError:
            raise ConfigError('[{}] {} must be {}, got "{}"'.format(section, key, type_.__name__, raw))

    def as_dict(self):
        return {s: dict(self.parser.items(s)) for s in self.parser.sections()}
