"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Exceptions raised by the uplift toolkit. The CLI maps UpliftError to exit
code 2 and anything else to exit code 1.
"""


class UpliftError(ValueError):
    pass


## DATASET

class SchemaError(UpliftError):
    pass


class ValidationError(UpliftError):
    pass


class ParseError(UpliftError):

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SplitError(UpliftError):
    pass


## MODELS

class FitError(UpliftError):
    pass


class CostError(UpliftError):
    pass


class GenSpecError(UpliftError):
    pass


## FILES

class ModelFileError(UpliftError):
    pass


class ConfigError(UpliftError):
    pass
