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

"""Command line front end: ``mixsel fit|caic|step``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import pandas as pd

from mixsel.caic import caic
from mixsel.config import get_config
from mixsel.dataset import load_csv
from mixsel.errors import (DatasetError, DesignError, EstimationError,
        FamilyError, FormulaError, MixselException, StepConfigError,
        ConfigError)
from mixsel.estimation import fit_model
from mixsel.families import FAMILIES, get_family
from mixsel.formula import parse_formula
from mixsel.stepwise import DIRECTIONS, StepConfig, step_caic
from mixsel.utils import setup_logging, signif

__all__ = ["RunConfig", "build_parser", "cmd_fit", "cmd_caic", "cmd_step",
        "main"]

logger = logging.getLogger('mixsel')

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_INPUT = 2

INPUT_ERRORS = (FormulaError, DatasetError, DesignError, FamilyError,
        StepConfigError, ConfigError, FileNotFoundError)


def _names(text):
    return tuple(n.strip() for n in text.split(',') if n.strip()) if text else ()


@dataclass
class RunConfig:
    """Everything one invocation needs."""
    command: str
    data: str
    formula: str
    family: str = 'gaussian'
    reml: bool = True
    step: StepConfig = field(default_factory=StepConfig)
    output_format: str = 'table'
    threads: int = None
    opts: list = field(default_factory=list)
    config_file: str = None
    verbose: int = 0

    def __post_init__(self):
        get_family(self.family)
        if self.threads is not None and self.threads < 1:
            raise StepConfigError("Thread count must be >= 1")
        if not os.path.exists(self.data):
            raise FileNotFoundError("Data file {} does not exist".format(
                self.data))
        if self.config_file is not None and not os.path.exists(self.config_file):
            raise FileNotFoundError("Config file {} does not exist".format(
                self.config_file))

    @classmethod
    def from_args(cls, args):
        step = StepConfig(direction=args.direction,
                group_candidates=_names(args.group_candidates),
                slope_candidates=_names(args.slope_candidates),
                fix_ef=_names(args.fix_ef), keep_fixed=args.keep_fixed,
                keep_random=args.keep_random, max_slopes=args.max_slopes,
                allow_use_across=args.allow_use_across,
                calc_non_optim=args.calc_non_optim, bs_type=args.bs_type,
                num_cores=args.threads, trace=args.trace, steps=args.steps)
        opts = [item for pair in (args.opt or []) for item in pair]
        return cls(command=args.command, data=args.data, formula=args.formula,
                family=args.family, reml=not args.ml, step=step,
                output_format=args.format, threads=args.threads, opts=opts,
                config_file=args.config, verbose=args.verbose)

    def config(self):
        """Global config with file, threads and ``--opt`` overrides."""
        opts = list(self.opts)
        if self.threads is not None:
            opts = ['CAIC.NUM_CORES', self.threads,
                    'STEP.NUM_CORES', self.threads] + opts
        return get_config(opts, config_file=self.config_file)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--data', required=True, help='CSV file with a header row')
    common.add_argument('--formula', required=True,
            help='Model formula, e.g. "y ~ x + (1 | g)"')
    common.add_argument('--family', default='gaussian', choices=list(FAMILIES))
    common.add_argument('--ml', action='store_true',
            help='Maximum likelihood instead of REML (gaussian only)')
    common.add_argument('--format', default='table', choices=['table', 'json'])
    common.add_argument('--threads', type=int, default=None,
            help='Parallel refits and candidate fits (default $MIXSEL_THREADS)')
    common.add_argument('--opt', nargs=2, action='append', metavar=('KEY', 'VALUE'),
            help='Config override, e.g. --opt CAIC.SIGMA_PENALTY 0.0')
    common.add_argument('--config', default=None, help='YAML config file')
    common.add_argument('-v', '--verbose', action='count', default=0)

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument('--direction', default='backward', choices=DIRECTIONS)
    search.add_argument('--group-candidates', default=None)
    search.add_argument('--slope-candidates', default=None)
    search.add_argument('--fix-ef', default=None)
    search.add_argument('--keep-fixed', default=None)
    search.add_argument('--keep-random', default=None)
    search.add_argument('--max-slopes', type=int, default=None)
    search.add_argument('--allow-use-across', action='store_true')
    search.add_argument('--calc-non-optim', action='store_true')
    search.add_argument('--bs-type', default='trunc')
    search.add_argument('--steps', type=int, default=None)
    search.add_argument('--trace', action='store_true')

    parser = argparse.ArgumentParser(prog='mixsel',
            description='Mixed models and conditional AIC model selection')
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('fit', parents=[common, search], help='Fit a model')
    sub.add_parser('caic', parents=[common, search],
            help='Conditional AIC of a model')
    sub.add_parser('step', parents=[common, search],
            help='Stepwise cAIC model selection')
    return parser


def _load(run, formula):
    factors = list(formula.group_names) + list(run.step.group_candidates)
    return load_csv(run.data, factors=list(dict.fromkeys(factors)))


def _fit(run, config):
    formula = parse_formula(run.formula)
    data = _load(run, formula)
    return fit_model(formula, data, family=run.family, reml=run.reml,
            config=config)


def _emit(out, payload):
    out.write(json.dumps(payload, indent=2) + "\n")


def _format_fit(m, digits):
    s = m.summary_dict()
    lines = []
    if m.is_gaussian:
        kind = 'REML' if m.reml else 'maximum likelihood'
        lines.append("Linear mixed model fit by {}".format(kind))
        crit = "REML criterion" if m.reml else "-2 log-likelihood"
    else:
        lines.append("Generalized linear mixed model fit by maximum "
                "likelihood (Laplace Approximation)")
        lines.append(" Family: {}".format(m.family_impl))
        crit = "Laplace deviance"
    lines.append("Formula: {}".format(s['formula']))
    lines.append("")
    lines.append("{} at convergence: {:.3f}".format(crit, s['criterion']))
    lines.append("AIC: {:.3f}".format(s['aic']))
    if not s['converged']:
        lines.append("Warning: the optimizer did not converge")
    lines.append("")

    rows = []
    for vc in s['varcorr']:
        for k, (name, sd) in enumerate(zip(vc['names'], vc['stddev'])):
            corr = " ".join("{:.2f}".format(vc['corr'][k][j]) for j in range(k))
            rows.append({'Groups': vc['group'] if k == 0 else '',
                'Name': name, 'Std.Dev.': "{:.3f}".format(sd), 'Corr': corr})
    if m.is_gaussian:
        rows.append({'Groups': 'Residual', 'Name': '',
            'Std.Dev.': "{:.3f}".format(s['sigma']), 'Corr': ''})
    if rows:
        lines.append("Random effects:")
        lines.append(pd.DataFrame(rows).to_string(index=False))

    groups = sorted(s['groups'].items(), key=lambda kv: -kv[1])
    obs = "Number of obs: {}".format(s['nobs'])
    if groups:
        obs += ", groups:  " + "; ".join("{}, {}".format(g, n)
                for g, n in groups)
    lines.append(obs)
    lines.append("")
    lines.append("Fixed effects:")
    fixef = pd.DataFrame({'Estimate': [signif(v, digits)
        for v in s['fixef'].values()]}, index=list(s['fixef']))
    lines.append(fixef.to_string())
    return "\n".join(lines) + "\n"


def cmd_fit(run, config=None, out=None):
    """Fit the model and print its summary."""
    config = config or run.config()
    out = out or sys.stdout
    m = _fit(run, config)
    if run.output_format == 'json':
        _emit(out, m.summary_dict())
    else:
        out.write(_format_fit(m, config.OUTPUT.SIGNIFICANT_DIGITS))
    return EXIT_OK


def cmd_caic(run, config=None, out=None):
    """Fit the model and print its conditional AIC."""
    config = config or run.config()
    out = out or sys.stdout
    result = caic(_fit(run, config), config)
    if run.output_format == 'json':
        _emit(out, result.to_dict())
        return EXIT_OK
    digits = config.OUTPUT.SIGNIFICANT_DIGITS
    d = result.to_dict()
    out.write("loglikelihood   {}\n".format(signif(d['loglikelihood'], digits)))
    out.write("df              {}\n".format(signif(d['df'], digits)))
    out.write("reducedFormula  {}\n".format(d['reducedFormula'] or 'NULL'))
    out.write("newFit          {}\n".format(str(d['newFit']).upper()))
    out.write("caic            {}\n".format(signif(d['caic'], digits)))
    return EXIT_OK


def cmd_step(run, config=None, out=None):
    """Run the stepwise search and print the trace or the final line."""
    config = config or run.config()
    out = out or sys.stdout
    best, trace = step_caic(_fit(run, config), run.step, config)
    digits = config.OUTPUT.SIGNIFICANT_DIGITS
    if run.output_format == 'json':
        _emit(out, {'best': best.formula.render(), 'caic': trace.best_caic,
            'trace': trace.to_dict()})
    elif run.step.trace:
        out.write(trace.render(digits) + "\n")
    else:
        out.write("Best model: {} , cAIC: {}\n".format(trace.best,
            signif(trace.best_caic, digits)))
    return EXIT_OK


COMMANDS = {'fit': cmd_fit, 'caic': cmd_caic, 'step': cmd_step}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run = RunConfig.from_args(args)
        config = run.config()
        level = config.LOGGING.LEVEL
        if run.verbose == 1:
            level = 'INFO'
        elif run.verbose > 1:
            level = 'DEBUG'
        setup_logging(level, config.LOGGING.FORMAT)
        return COMMANDS[run.command](run, config)
    except INPUT_ERRORS as e:
        sys.stderr.write("mixsel: error: {}\n".format(e))
        return EXIT_INPUT
    except EstimationError as e:
        sys.stderr.write("mixsel: numerical failure: {}\n".format(e))
        return EXIT_NUMERICAL
    except MixselException as e:
        sys.stderr.write("mixsel: {}\n".format(e))
        return EXIT_NUMERICAL


if __name__ == '__main__':
    sys.exit(main())
