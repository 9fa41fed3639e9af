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

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.optimize import Bounds, minimize

from mixsel.config import cfg
from mixsel.errors import EstimationError

__all__ = ["OptimResult", "minimize_bounded"]

logger = logging.getLogger('mixsel')


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    converged: bool
    nfev: int
    message: str = ''


def _safe(fun):
    def wrapped(x):
        try:
            val = float(fun(x))
        except (EstimationError, linalg.LinAlgError, FloatingPointError):
            return np.inf
        return val if np.isfinite(val) else np.inf
    return wrapped


def _initial_simplex(x0, step, upper):
    n = x0.size
    sim = np.tile(x0, (n + 1, 1))
    for i in range(n):
        delta = step * max(abs(x0[i]), 1.0)
        if x0[i] + delta > upper[i]:
            delta = -delta
        sim[i + 1, i] += delta
    return sim


def _seeds(x0, lower, upper, n_starts):
    scale = 0.5 * np.maximum(np.abs(x0), 1.0)
    seeds = [x0]
    for k in range(1, n_starts):
        sign = 1.0 if k % 2 else -1.0
        shift = sign * ((k + 1) // 2) * scale
        seeds.append(np.clip(x0 + shift, lower, upper))
    return seeds


def minimize_bounded(fun, x0, lower=None, upper=None, config=None, step=None,
        n_starts=None, polish=None):
    """Minimize `fun` with Nelder-Mead under box constraints.

    Runs from `n_starts` deterministic seeds around `x0`, restarts once from
    the best result, and finally tries every coordinate flagged in `polish`
    at exactly its lower bound when it ends up within
    ``OPTIMIZER.BOUNDARY_POLISH`` of it.

    :param fun: Objective; failures and non-finite values count as +inf
    :param x0: Starting point
    :param lower: Lower bounds, -inf when omitted
    :param upper: Upper bounds, +inf when omitted
    :param config: Config node, defaults to :data:`mixsel.config.cfg`
    :param step: Relative size of the initial simplex
    :param n_starts: Number of seeds, defaults to ``OPTIMIZER.N_STARTS``
    :param polish: Boolean mask of coordinates to snap to their bound
    :rtype: :class:`OptimResult`
    """
    opt = (config or cfg).OPTIMIZER

    x0 = np.asarray(x0, dtype=float).copy()
    n = x0.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, float)
    x0 = np.clip(x0, lower, upper)
    step = opt.INITIAL_STEP if step is None else step
    n_starts = opt.N_STARTS if n_starts is None else n_starts

    target = _safe(fun)
    if n == 0:
        return OptimResult(x0, target(x0), True, 1)

    bounds = Bounds(lower, upper)
    options = {'xatol': opt.XATOL, 'fatol': opt.FATOL,
            'maxiter': opt.MAX_ITER, 'maxfev': 2 * opt.MAX_ITER}

    def run(start):
        res = minimize(target, start, method='Nelder-Mead', bounds=bounds,
                options=dict(options,
                    initial_simplex=_initial_simplex(start, step, upper)))
        return OptimResult(np.clip(res.x, lower, upper), float(res.fun),
                bool(res.success), int(res.nfev), str(res.message))

    best = None
    nfev = 0
    for seed in _seeds(x0, lower, upper, max(1, n_starts)):
        res = run(seed)
        nfev += res.nfev
        logger.debug("Nelder-Mead from {} -> {:.10g} ({} evaluations)".format(
            np.round(seed, 4), res.fun, res.nfev))
        if best is None or res.fun < best.fun:
            best = res

    if opt.RESTART:
        res = run(best.x)
        nfev += res.nfev
        if res.fun <= best.fun:
            best = res

    if polish is not None:
        polish = np.asarray(polish, dtype=bool)
        for j in np.flatnonzero(polish):
            if 0 < best.x[j] - lower[j] < opt.BOUNDARY_POLISH:
                x = best.x.copy()
                x[j] = lower[j]
                val = target(x)
                nfev += 1
                if val <= best.fun:
                    logger.debug("Parameter {} set to its bound".format(j))
                    best = OptimResult(x, val, best.converged, best.nfev,
                            best.message)

    best.nfev = nfev
    if not np.isfinite(best.fun):
        best.converged = False
    return best
