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

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from mixsel.caic import caic
from mixsel.config import cfg
from mixsel.errors import (FormulaError, MissingVariableError, MixselException,
        StepConfigError)
from mixsel.estimation import fit_model
from mixsel.formula import (DEFAULT_BASIS, INTERCEPT, RandomTerm, add_fixed,
        add_random, drop_fixed, drop_random, parse_formula, render_rhs,
        replace_random, to_linear, to_smooth)
from mixsel.utils import parallel_map, signif

__all__ = ["StepConfig", "KeepTerms", "CandidateRow", "StepRecord", "StepTrace",
        "backward_candidates", "forward_candidates", "step_caic"]

logger = logging.getLogger('mixsel')

DIRECTIONS = ('backward', 'forward', 'both')

SEPARATOR = "_" * 45


@dataclass(frozen=True)
class KeepTerms:
    """Terms the search must not touch."""
    variables: frozenset = frozenset()
    randoms: frozenset = frozenset()

    @classmethod
    def parse(cls, fixed=None, random=None):
        variables, randoms = set(), set()
        for fragment in (fixed, random):
            if not fragment:
                continue
            try:
                f = parse_formula(".keep ~ " + fragment)
            except FormulaError as e:
                raise StepConfigError("Invalid keep fragment {!r}: {}".format(
                    fragment, e))
            variables.update(f.fixed_names)
            variables.update(f.smooth_names)
            randoms.update(t.key() for t in f.randoms)
        return cls(frozenset(variables), frozenset(randoms))

    def check(self, f):
        """Raise when a kept term is not part of `f`."""
        present = set(f.fixed_names) | set(f.smooth_names)
        missing = sorted(self.variables - present)
        keys = {t.key() for t in f.randoms}
        if missing or not self.randoms <= keys:
            raise StepConfigError("Kept terms are not all in the initial "
                    "model {}".format(f.render()))


@dataclass(frozen=True)
class StepConfig:
    """Options of the stepwise search.

    :param direction: 'backward', 'forward' or 'both'
    :param group_candidates: Grouping variables for new random intercepts
    :param slope_candidates: Variables for new random slopes
    :param fix_ef: Variables that may enter, leave, or become smooth
    :param keep_fixed: Fixed part fragment that stays, e.g. ``"x1 + s(x2)"``
    :param keep_random: Random part fragment that stays, e.g. ``"(1 | g)"``
    :param max_slopes: Maximum number of slopes per grouping variable
    :param allow_use_across: Allow a slope variable on several groups
    :param calc_non_optim: Also compare candidates whose fit did not converge
    :param bs_type: Basis label of smooth upgrades
    :param num_cores: Parallel candidate evaluations
    :param trace: Print the step trace
    :param steps: Maximum number of steps
    """
    direction: str = 'backward'
    group_candidates: tuple = ()
    slope_candidates: tuple = ()
    fix_ef: tuple = ()
    keep_fixed: str = None
    keep_random: str = None
    max_slopes: int = None
    allow_use_across: bool = False
    calc_non_optim: bool = False
    bs_type: str = DEFAULT_BASIS
    num_cores: int = None
    trace: bool = False
    steps: int = None

    def __post_init__(self):
        for name in ('group_candidates', 'slope_candidates', 'fix_ef'):
            object.__setattr__(self, name, tuple(getattr(self, name) or ()))
        if self.direction not in DIRECTIONS:
            raise StepConfigError("Direction must be one of {}".format(
                ", ".join(DIRECTIONS)))
        if self.max_slopes is not None and self.max_slopes < 0:
            raise StepConfigError("max_slopes must be >= 0")
        if self.num_cores is not None and self.num_cores < 1:
            raise StepConfigError("num_cores must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise StepConfigError("steps must be >= 1")

    @property
    def keep(self):
        return KeepTerms.parse(self.keep_fixed, self.keep_random)


@dataclass(frozen=True)
class CandidateRow:
    formula: str
    cond_loglik: float = None
    df: float = None
    caic: float = None
    converged: bool = False


@dataclass(frozen=True)
class StepRecord:
    index: int
    direction: str
    incumbent: str
    incumbent_caic: float
    rows: tuple = ()
    chosen: str = None

    @property
    def improved(self):
        return self.chosen is not None


@dataclass
class StepTrace:
    """Everything the search looked at, step by step."""
    initial: str
    initial_caic: float
    steps: list = field(default_factory=list)
    best: str = None
    best_caic: float = None
    stop_reason: str = None

    def render(self, digits=6):
        lines = ["Starting stepwise procedure..."]
        for step in self.steps:
            lines += [SEPARATOR, SEPARATOR, " ",
                    "Step {} ({}):  cAIC={}".format(step.index, step.direction,
                        signif(step.incumbent_caic, 7)),
                    "Best model so far: {}".format(step.incumbent),
                    "New Candidates:", "",
                    "Calculating cAIC for {} model(s) ...".format(
                        len(step.rows)), ""]
            if step.rows:
                lines += [_table(step.rows, digits), ""]
        lines += [SEPARATOR, SEPARATOR, " ",
                "Best model: {} , cAIC: {}".format(self.best,
                    signif(self.best_caic, digits)),
                SEPARATOR]
        return "\n".join(lines)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text) if isinstance(text, str) else dict(text)
        steps = []
        for s in data.pop('steps', []):
            rows = tuple(CandidateRow(**r) for r in s.pop('rows', []))
            steps.append(StepRecord(rows=rows, **s))
        return cls(steps=steps, **data)


def _table(rows, digits):
    frame = pd.DataFrame({
        'models': [r.formula for r in rows],
        'loglikelihood': [r.cond_loglik for r in rows],
        'df': [r.df for r in rows],
        'caic': [r.caic for r in rows],
    })
    fmt = lambda v: signif(None if v is None or pd.isna(v) else v, digits)
    return frame.to_string(index=False, formatters={
        'loglikelihood': fmt, 'df': fmt, 'caic': fmt})


def _unique(formulas):
    seen, out = set(), []
    for f in formulas:
        text = f.render()
        if text not in seen:
            seen.add(text)
            out.append(f)
    return out


def _attempt(build, out):
    try:
        out.append(build())
    except FormulaError as e:
        logger.debug("Skipping candidate: {}".format(e))


def backward_candidates(f, keep=None, fix_ef=()):
    """Formulas one reduction away from `f`.

    Correlated terms first become uncorrelated, then lose one component at
    a time; single component terms are dropped. Variables in `fix_ef` go
    from smooth to linear and from linear to absent.

    :param f: Current formula
    :param keep: Protected terms
    :type keep: :class:`KeepTerms`, optional
    :param fix_ef: Fixed effect variables open to selection
    :rtype: list of :class:`mixsel.formula.ModelFormula`
    """
    keep = keep or KeepTerms()
    out = []
    for i, term in enumerate(f.randoms):
        if term.key() in keep.randoms:
            continue
        if term.n_components == 1:
            _attempt(lambda: drop_random(f, i), out)
            continue
        _attempt(lambda: replace_random(f, i, term.split()), out)
        for comp in term.component_names:
            reduced = RandomTerm(term.group,
                    term.has_intercept and comp != INTERCEPT,
                    tuple(s for s in term.slopes if s != comp), True)
            _attempt(lambda: replace_random(f, i, (reduced,)), out)

    for v in fix_ef:
        if v in keep.variables:
            continue
        if v in f.smooth_names:
            _attempt(lambda: to_linear(f, v), out)
        elif v in f.fixed_names:
            _attempt(lambda: drop_fixed(f, v), out)
    return _unique(out)


def _slopes_on(f, group):
    return {s for t in f.randoms if t.group == group for s in t.slopes}


def forward_candidates(f, c, d, config=None):
    """Formulas one extension away from `f`.

    In order: random intercepts for unused grouping candidates, random slopes
    on the grouping variables in the model, linear terms for absent `fix_ef`
    variables and smooth upgrades of linear ones.

    :param f: Current formula
    :param c: Search options
    :type c: :class:`StepConfig`
    :param d: Dataset the candidates will be fitted on
    :param config: Config node for the default ``STEP.MAX_SLOPES``
    :raises MissingVariableError: For a candidate variable not in `d`
    """
    for name in c.group_candidates + c.slope_candidates + c.fix_ef:
        if name not in d:
            raise MissingVariableError("Candidate variable {} not in "
                    "dataset".format(name))
    keep = c.keep
    max_slopes = (config or cfg).STEP.MAX_SLOPES if c.max_slopes is None \
            else c.max_slopes
    out = []

    for g in c.group_candidates:
        if g not in f.group_names:
            _attempt(lambda: add_random(f, RandomTerm(g)), out)

    for s in c.slope_candidates:
        for g in f.group_names:
            used = _slopes_on(f, g)
            if s == g or s in used or len(used) >= max_slopes:
                continue
            elsewhere = any(s in _slopes_on(f, h) for h in f.group_names
                    if h != g)
            if elsewhere and not c.allow_use_across:
                continue
            _attempt(lambda: add_random(f, RandomTerm(g, False, (s,))), out)

    for v in c.fix_ef:
        if v not in f.fixed_names and v not in f.smooth_names:
            _attempt(lambda: add_fixed(f, v), out)
    for v in c.fix_ef:
        if v in f.fixed_names and v not in keep.variables:
            _attempt(lambda: to_smooth(f, v, c.bs_type), out)
    return _unique(out)


def _zero_smooth(m, config):
    theta = np.asarray(m.theta_hat)
    limit = config.CAIC.BOUNDARY_TOL * m.sigma
    return [b.label for b in m.design.smooth_blocks()
            if m.sigma * np.abs(theta[b.diagonal_theta]).max() <= limit]


def _evaluate(f, m, c, config):
    start = time.time()
    try:
        fit = fit_model(f, m.data, family=m.family, reml=m.reml, config=config)
        if not fit.converged and not c.calc_non_optim:
            logger.info("Candidate {} did not converge".format(f.render()))
            return CandidateRow(render_rhs(f)), None
        result = caic(fit, config)
    except MixselException as e:
        logger.warning("Candidate {} failed: {}".format(f.render(), e))
        return CandidateRow(render_rhs(f)), None
    except Exception:
        logger.exception("Unexpected failure of candidate {}".format(
            f.render()))
        return CandidateRow(render_rhs(f)), None
    logger.debug("Candidate {} took {:.2f}s".format(f.render(),
        time.time() - start))
    row = CandidateRow(render_rhs(f), result.cond_loglik, result.df,
            result.caic, fit.converged)
    return row, result


def step_caic(m, c=None, config=None):
    """Stepwise search for the model with the smallest conditional AIC.

    :param m: Fitted starting model; family and REML flag carry over
    :param c: Search options
    :type c: :class:`StepConfig`, optional
    :param config: Config node, defaults to :data:`mixsel.config.cfg`
    :return: The best model and the trace of the search
    :rtype: tuple(:class:`mixsel.estimation.FittedModel`, :class:`StepTrace`)
    """
    c = c or StepConfig()
    config = config or cfg
    keep = c.keep
    keep.check(m.formula)
    if not m.converged:
        logger.warning("Starting model {} did not converge".format(
            m.formula.render()))

    num_cores = c.num_cores or config.STEP.NUM_CORES
    max_steps = c.steps or config.STEP.MAX_STEPS
    eps = config.STEP.IMPROVEMENT_EPS

    current = caic(m, config)
    incumbent = current.model
    trace = StepTrace(render_rhs(incumbent.formula), current.caic)
    direction = 'forward' if c.direction == 'both' else c.direction
    failures = 0
    reason = 'max-steps'

    for index in range(1, max_steps + 1):
        if direction == 'backward':
            candidates = backward_candidates(incumbent.formula, keep, c.fix_ef)
        else:
            candidates = forward_candidates(incumbent.formula, c, m.data,
                    config)

        evaluated = parallel_map(lambda f: _evaluate(f, m, c, config),
                candidates, num_cores)
        rows = tuple(row for row, _ in evaluated)

        best = None
        for row, result in evaluated:
            if result is None:
                continue
            if best is None or result.caic < best[1].caic:
                best = (row, result)

        improved = best is not None and best[1].caic < current.caic - eps
        trace.steps.append(StepRecord(index, direction,
            render_rhs(incumbent.formula), current.caic, rows,
            best[0].formula if improved else None))

        if improved:
            zero = _zero_smooth(best[1].model, config)
            if zero:
                logger.warning("Model {} contains zero variance smooths {}; "
                        "remove them manually".format(best[0].formula,
                            ", ".join(zero)))
                reason = 'zero-variance-smooth'
                break
            logger.info("Step {} ({}): {} with cAIC {:.6f}".format(index,
                direction, best[0].formula, best[1].caic))
            current = best[1]
            incumbent = current.model
            failures = 0
        else:
            failures += 1
            reason = 'no-candidates' if not candidates else 'no-improvement'
            if c.direction != 'both' or failures >= config.STEP.PATIENCE:
                break

        if c.direction == 'both':
            direction = 'backward' if direction == 'forward' else 'forward'

    trace.best = render_rhs(incumbent.formula)
    trace.best_caic = current.caic
    trace.stop_reason = reason
    logger.info("Best model: {} , cAIC: {:.6f} ({})".format(trace.best,
        trace.best_caic, reason))
    return incumbent, trace
