from .formula import ModelFormula, parse_formula
from .dataset import Dataset, load_csv
from .estimation import FittedModel, fit_lmm, fit_glmm, fit_model, refit
from .caic import CaicResult, caic
from .stepwise import StepConfig, StepTrace, step_caic
from .errors import *
