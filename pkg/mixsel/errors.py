# Copyright 2024-present, the mixsel developers
# 
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# 
#    http://www.apache.org/licenses/LICENSE-2.0
# 
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
##############################################################################

__all__ = ["MixselException", "FormulaError", "FormulaSyntaxError",
        "UnknownBasisError", "DatasetError", "DesignError",
        "MissingVariableError", "FamilyError", "StepConfigError", "ConfigError",
        "EstimationError", "RankDeficientError", "BoundaryError", "RefitError"]

class MixselException(Exception):
    """Wrapper for mixsel exceptions.
    """
    pass

class FormulaError(MixselException):
    """Raised when a model formula is malformed or inconsistent.
    """
    pass

class FormulaSyntaxError(FormulaError):
    """Raised when formula text does not match the grammar.

    :param message: What went wrong
    :param offset: Byte offset into the UTF-8 encoded formula text
    """
    def __init__(self, message, offset):
        super().__init__("{} (at offset {})".format(message, offset))
        self.offset = offset

class UnknownBasisError(FormulaError):
    """Raised when a smooth term names a basis that is not known at all.
    """
    pass

class DatasetError(MixselException):
    """Raised when a data file cannot be turned into a dataset.
    """
    pass

class DesignError(MixselException):
    """Raised when design matrices cannot be built for a formula and dataset.
    """
    pass

class MissingVariableError(DesignError):
    """Raised when a formula names a column the dataset does not have.
    """
    pass

class FamilyError(MixselException):
    """Raised for unknown response families or responses a family cannot model.
    """
    pass

class StepConfigError(MixselException):
    """Raised when a stepwise configuration is inconsistent with the initial model.
    """
    pass

class ConfigError(MixselException):
    """Raised when configuration overrides do not match the config tree.
    """
    pass

class EstimationError(MixselException):
    """Raised when a numerical step of fitting or cAIC computation fails.
    """
    pass

class RankDeficientError(EstimationError):
    """Raised when the fixed effects design is rank deficient.
    """
    pass

class BoundaryError(EstimationError):
    """Raised when variance parameters sit on (or cross) the parameter space
    boundary where the analytic correction does not apply.
    """
    pass

class RefitError(EstimationError):
    """Raised when refits on perturbed or reduced responses fail.

    :param message: What went wrong
    :param indices: Observation indices whose refits failed
    :param formula: Formula of the model that was being refitted
    """
    def __init__(self, message, indices=(), formula=None):
        if formula is not None:
            message = "{} [formula: {}]".format(message, formula)
        super().__init__(message)
        self.indices = list(indices)
        self.formula = formula
