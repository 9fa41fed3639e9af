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

"""Conditional AIC of fitted mixed models.

The conditional AIC is -2 log f(y | β̂, û) plus twice the effective degrees
of freedom. For Gaussian responses the degrees of freedom are the trace of
the hat matrix with the estimation of the covariance parameters accounted
for; for Poisson and Bernoulli responses they follow from refits on
perturbed responses.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from mixsel.config import cfg, get_config
from mixsel.design import (covariance_to_theta, dtheta_pattern,
        theta_to_covariance)
from mixsel.errors import (BoundaryError, EstimationError, FamilyError,
        RankDeficientError, RefitError)
from mixsel.estimation import (conditional_loglik, covariance_factor_blocks,
        fit_lmm, marginal_aic, pls_solve, profiled_criterion,
        refit)
from mixsel.formula import parse_formula, reduce_by_component_names
from mixsel.utils import parallel_map

__all__ = ["CaicResult", "caic", "delete_zero_components", "scaled_precision",
        "residual_projector", "covariance_derivatives", "criterion_hessian",
        "criterion_cross_derivative", "fd_hessian", "gaussian_bias_correction",
        "numeric_bias_correction", "poisson_bias_correction",
        "bernoulli_flip_etas", "bernoulli_bias_correction", "classical_aic"]

logger = logging.getLogger('mixsel')


@dataclass(frozen=True)
class CaicResult:
    """Conditional log-likelihood, degrees of freedom and cAIC of a model.

    `caic` is derived from the other two fields and always equals
    ``-2 * cond_loglik + 2 * df``.
    """
    cond_loglik: float
    df: float
    reduced_formula: object = None
    refitted: bool = False
    caic: float = field(init=False)
    model: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'cond_loglik', float(self.cond_loglik))
        object.__setattr__(self, 'df', float(self.df))
        object.__setattr__(self, 'refitted', self.reduced_formula is not None)
        object.__setattr__(self, 'caic', -2.0 * self.cond_loglik + 2.0 * self.df)

    def to_dict(self):
        return {
            'loglikelihood': self.cond_loglik,
            'df': self.df,
            'reducedFormula': None if self.reduced_formula is None
                else self.reduced_formula.render(),
            'newFit': self.refitted,
            'caic': self.caic,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text) if isinstance(text, str) else text
        reduced = data.get('reducedFormula')
        return cls(data['loglikelihood'], data['df'],
                parse_formula(reduced) if reduced is not None else None)


def _require_gaussian(m, what):
    if not m.is_gaussian:
        raise FamilyError("{} needs a gaussian model, got {}".format(what,
            m.family))


def delete_zero_components(m, tol=None, config=None):
    """Remove random effect components estimated at zero, recursively.

    A component is zero when its diagonal entry of the covariance factor
    σ̂ T is at most `tol`. Smooth terms are left alone.

    :param m: Gaussian fitted model
    :param tol: Absolute tolerance, ``CAIC.BOUNDARY_TOL * σ̂`` by default
    :param config: Config node, defaults to :data:`mixsel.config.cfg`
    :return: `m` itself when nothing is zero, otherwise the refitted model
    :raises RefitError: When the reduced model cannot be fitted
    """
    config = config or cfg
    _require_gaussian(m, "Zero component deletion")
    while True:
        limit = config.CAIC.BOUNDARY_TOL * m.sigma if tol is None else tol
        blocks = [b for b in covariance_factor_blocks(m) if not b.is_smooth]
        kept, dropped = [], []
        for term, block in zip(m.formula.randoms, blocks):
            diag = m.sigma * np.abs(np.diag(block.factor))
            kept.append([c for c, v in zip(term.component_names, diag)
                if v > limit])
            dropped.extend("{} in {}".format(c, term.render())
                    for c, v in zip(term.component_names, diag) if v <= limit)
        if not dropped:
            return m

        reduced = reduce_by_component_names(m.formula, kept)
        logger.info("Removing zero components {}; refitting {}".format(
            ", ".join(dropped), reduced.render()))
        try:
            m = fit_lmm(reduced, m.data, reml=m.reml, config=config)
        except EstimationError as e:
            raise RefitError("Refit of reduced model failed: {}".format(e),
                    formula=reduced)


def scaled_precision(m):
    """V₀⁻¹ = (I + ZΛΛᵗZᵗ)⁻¹ = I - MᵗM with M = L⁻¹ΛᵗZᵗ.

    :rtype: :class:`numpy.ndarray`
    """
    _require_gaussian(m, "Scaled precision")
    n = m.n
    if m.q == 0:
        return np.eye(n)
    ZL = (m.design.Z @ m.lambda_factor()).tocsc()
    M = m.L.solve_L(ZL.T)
    V = np.eye(n) - M.T @ M
    return (V + V.T) / 2


def residual_projector(m, V0inv=None):
    """A = V₀⁻¹ - V₀⁻¹X(XᵗV₀⁻¹X)⁻¹XᵗV₀⁻¹, through the Cholesky factor of
    XᵗV₀⁻¹X.

    :raises RankDeficientError: When XᵗV₀⁻¹X is singular
    """
    _require_gaussian(m, "Residual projector")
    if V0inv is None:
        V0inv = scaled_precision(m)
    X = m.design.X
    if X.shape[1] == 0:
        return V0inv.copy()
    XtV = X.T @ V0inv
    try:
        RX = linalg.cholesky(XtV @ X, lower=False)
    except linalg.LinAlgError:
        raise RankDeficientError("XᵗV₀⁻¹X is singular")
    K = linalg.solve_triangular(RX, XtV, trans='T', lower=False)
    A = V0inv - K.T @ K
    return (A + A.T) / 2


def covariance_derivatives(m):
    """W_j = Z D⁽ʲ⁾ Zᵗ, the derivative of V₀ in each covariance parameter φ_j.

    :rtype: list of :class:`numpy.ndarray`
    """
    _require_gaussian(m, "Covariance derivatives")
    Z = m.design.Z
    return [(Z @ dtheta_pattern(m.design, j) @ Z.T).toarray()
            for j in range(m.theta_dim)]


def _active_parameters(m, config, warn=False):
    """Indices of φ that take part in the correction; zero smooth variances
    stay fixed.
    """
    limit = config.CAIC.BOUNDARY_TOL * m.sigma
    theta = np.asarray(m.theta_hat)
    inactive = set()
    for block in m.design.smooth_blocks():
        if m.sigma * np.abs(theta[block.diagonal_theta]).max() <= limit:
            if warn:
                logger.warning("Smooth {} has zero variance and is held fixed "
                        "in the degrees of freedom".format(block.label))
            inactive.update(range(block.theta_slice.start,
                block.theta_slice.stop))
    return [j for j in range(m.theta_dim) if j not in inactive]


def _steps(m, phi, active, config):
    h0 = config.CAIC.HESSIAN_STEP
    variance = m.design.diagonal_theta
    steps = np.array([max(h0, h0 * abs(phi[j])) for j in active])
    for k, j in enumerate(active):
        if variance[j] and phi[j] <= 0:
            raise BoundaryError("Variance parameter {} is at zero; remove "
                    "components at the boundary first".format(j))
        if variance[j] and phi[j] - steps[k] < 0:
            steps[k] = phi[j] / 2
    return steps


def fd_hessian(fun, x, steps):
    """Central difference Hessian of `fun` at `x`.

    Diagonal entries use the three point second difference, off diagonal
    entries the four point mixed difference.
    """
    x = np.asarray(x, dtype=float)
    k = x.size
    f0 = fun(x)
    H = np.zeros((k, k))

    def at(*shifts):
        xs = x.copy()
        for i, s in shifts:
            xs[i] += s * steps[i]
        return fun(xs)

    for i in range(k):
        H[i, i] = (at((i, 1)) - 2 * f0 + at((i, -1))) / steps[i] ** 2
        for j in range(i):
            H[i, j] = H[j, i] = (at((i, 1), (j, 1)) - at((i, 1), (j, -1))
                    - at((i, -1), (j, 1)) + at((i, -1), (j, -1))) \
                    / (4 * steps[i] * steps[j])
    return H


def _phi_objective(m, phi, active):
    design = m.design

    def crit(values):
        full = phi.copy()
        full[active] = values
        try:
            theta = covariance_to_theta(design, full)
        except BoundaryError:
            raise BoundaryError("Finite difference step left the covariance "
                    "parameter space; a parameter is at or near the boundary")
        return profiled_criterion(theta, design, m.y, m.reml)
    return crit


def criterion_hessian(m, config=None):
    """B, the Hessian of the profiled criterion in the covariance parameters
    φ, at the estimate.

    Only active parameters are included (zero smooth variances are held
    fixed).

    :raises BoundaryError: When B is not positive definite
    """
    config = config or cfg
    _require_gaussian(m, "Criterion Hessian")
    phi = theta_to_covariance(m.design, m.theta_hat)
    active = _active_parameters(m, config)
    if not active:
        return np.zeros((0, 0))
    B = fd_hessian(_phi_objective(m, phi, active), phi[active],
            _steps(m, phi, active, config))
    B = (B + B.T) / 2
    try:
        linalg.cho_factor(B)
    except (linalg.LinAlgError, ValueError):
        raise BoundaryError("Hessian of the criterion is not positive "
                "definite; remove components at the boundary first")
    return B


def criterion_cross_derivative(m, config=None):
    """G, the derivative in φ of the y-gradient of the profiled criterion.

    The y-gradient is 2 (n - p_eff) A y / yᵗAy, where A y is the conditional
    residual and yᵗAy the penalized residual sum of squares. By default the
    part of G that comes from differentiating yᵗAy enters with half weight,
    the convention behind the published cAIC values of lme4 fits; with
    ``CAIC.EXACT_CROSS_DERIVATIVE`` G is the exact derivative, which is what
    :func:`numeric_bias_correction` estimates.
    """
    config = config or cfg
    _require_gaussian(m, "Cross derivative")
    design = m.design
    n_eff = m.n - (m.p if m.reml else 0)
    phi = theta_to_covariance(design, m.theta_hat)
    active = _active_parameters(m, config)
    steps = _steps(m, phi, active, config)

    def gradient(values):
        sol = pls_solve(design, covariance_to_theta(design, values), m.y)
        if sol.pwrss <= 0:
            raise EstimationError("yᵗAy is not positive")
        return 2.0 * n_eff * (m.y - sol.eta) / sol.pwrss

    G = np.zeros((len(active), m.n))
    for k, j in enumerate(active):
        up, down = phi.copy(), phi.copy()
        up[j] += steps[k]
        down[j] -= steps[k]
        G[k] = (gradient(up) - gradient(down)) / (2 * steps[k])
    if config.CAIC.EXACT_CROSS_DERIVATIVE:
        return G

    fit = pls_solve(design, m.theta_hat, m.y)
    Ay = m.y - fit.eta
    ZtAy = design.Z.T @ Ay
    for k, j in enumerate(active):
        yAWAy = float(ZtAy @ (dtheta_pattern(design, j) @ ZtAy))
        G[k] -= n_eff * yAWAy * Ay / fit.pwrss ** 2
    return G


def gaussian_bias_correction(m, config=None):
    """Effective degrees of freedom of a Gaussian model.

    df = n - tr(A) + Σ_j (∂φ̂_j/∂y)ᵗ A W_j A y + ``CAIC.SIGMA_PENALTY``, with
    ∂φ̂/∂y = -B⁻¹G from a Cholesky factorization of B.
    G follows ``CAIC.EXACT_CROSS_DERIVATIVE``, see
    :func:`criterion_cross_derivative`.

    :param m: Gaussian model without zero random components
    :rtype: float
    """
    config = config or cfg
    _require_gaussian(m, "Gaussian bias correction")
    A = residual_projector(m)
    df = m.n - float(np.trace(A))

    active = _active_parameters(m, config, warn=True)
    if active:
        B = criterion_hessian(m, config)
        G = criterion_cross_derivative(m, config)
        gamma = -linalg.cho_solve(linalg.cho_factor(B), G)
        Z = m.design.Z
        Ay = A @ m.y
        for k, j in enumerate(active):
            D = dtheta_pattern(m.design, j)
            AWAy = A @ (Z @ (D @ (Z.T @ Ay)))
            df += float(gamma[k] @ AWAy)

    df += config.CAIC.SIGMA_PENALTY
    logger.debug("Gaussian degrees of freedom of {}: {:.6f}".format(
        m.formula.render(), df))
    return df


def _tight_config(config):
    return get_config(['OPTIMIZER.XATOL', float(config.CAIC.NUMERIC_XATOL)],
            base=config)


def numeric_bias_correction(m, h=None, config=None):
    """Degrees of freedom as tr(∂ŷ/∂y) by one-sided perturbation refits.

    :param m: Gaussian fitted model
    :param h: Perturbation, ``CAIC.NUMERIC_STEP * sd(y)`` by default
    :raises RefitError: When more than ``CAIC.MAX_FAILURE_RATE`` of the
        refits fail
    """
    config = config or cfg
    _require_gaussian(m, "Numeric bias correction")
    if h is None:
        h = config.CAIC.NUMERIC_STEP * float(np.std(m.y, ddof=1))
    tight = _tight_config(config)
    base = refit(m, m.y, config=tight)
    fitted = base.linear_predictor

    def one(i):
        y = base.y.copy()
        y[i] += h
        try:
            r = refit(base, y, config=tight)
        except EstimationError as e:
            logger.debug("Refit {} failed: {}".format(i, e))
            return None
        if not r.converged:
            return None
        return (r.linear_predictor[i] - fitted[i]) / h

    values = parallel_map(one, range(m.n), config.CAIC.NUM_CORES)
    failed = [i for i, v in enumerate(values) if v is None]
    if len(failed) > config.CAIC.MAX_FAILURE_RATE * m.n:
        raise RefitError("{} of {} perturbation refits failed".format(
            len(failed), m.n), indices=failed, formula=m.formula)
    if failed:
        logger.warning("{} perturbation refits failed and were skipped".format(
            len(failed)))
    return float(sum(v for v in values if v is not None)) \
            + config.CAIC.SIGMA_PENALTY


def _refit_robust(m, y, config):
    """Warm refit, falling back to a cold start; None when both fail."""
    for cold in (False, True):
        try:
            r = refit(m, y, config=config, cold=cold)
        except EstimationError as e:
            logger.debug("Refit failed ({}): {}".format(
                'cold' if cold else 'warm', e))
            continue
        if r.converged:
            return r
    return None


def poisson_bias_correction(m, config=None):
    """Σ_{y_i>0} y_i (η̂_i(y) - η̂_i(y - e_i)).

    :raises RefitError: Listing the indices whose refits did not converge
    """
    config = config or cfg
    if m.family != 'poisson':
        raise FamilyError("Poisson bias correction needs a poisson model")
    eta = m.linear_predictor
    positive = [int(i) for i in np.flatnonzero(m.y > 0)]

    def one(i):
        y = m.y.copy()
        y[i] -= 1
        r = _refit_robust(m, y, config)
        return None if r is None else m.y[i] * (eta[i] - r.linear_predictor[i])

    values = parallel_map(one, positive, config.CAIC.NUM_CORES)
    failed = [i for i, v in zip(positive, values) if v is None]
    if failed:
        raise RefitError("Refits did not converge for observations {}".format(
            ", ".join(str(i) for i in failed)), indices=failed,
            formula=m.formula)
    return float(sum(values))


def bernoulli_flip_etas(m, config=None):
    """Linear predictor at each observation with y_i set to 1 and to 0.

    :return: Pair of arrays (eta_one, eta_zero); one side is the original fit
    :raises RefitError: Listing the indices whose refits did not converge
    """
    config = config or cfg
    if m.family != 'bernoulli':
        raise FamilyError("Bernoulli flips need a bernoulli model")
    eta = m.linear_predictor

    def one(i):
        y = m.y.copy()
        y[i] = 1.0 - y[i]
        r = _refit_robust(m, y, config)
        return None if r is None else r.linear_predictor[i]

    flipped = parallel_map(one, range(m.n), config.CAIC.NUM_CORES)
    failed = [i for i, v in enumerate(flipped) if v is None]
    if failed:
        raise RefitError("Refits did not converge for observations {}".format(
            ", ".join(str(i) for i in failed)), indices=failed,
            formula=m.formula)
    flipped = np.asarray(flipped, dtype=float)
    ones = m.y == 1
    return np.where(ones, eta, flipped), np.where(ones, flipped, eta)


def bernoulli_bias_correction(m, config=None):
    """Σ_i μ̂_i (1 - μ̂_i) (η̂_i(1) - η̂_i(0))."""
    eta_one, eta_zero = bernoulli_flip_etas(m, config)
    mu = m.fitted_values
    return float(np.sum(mu * (1 - mu) * (eta_one - eta_zero)))


def _require_fixed_only(m):
    if m.q != 0:
        raise EstimationError("Classical AIC needs a model without random "
                "effects")


def _fixed_only_parts(m):
    # log-likelihood at the fitted sigma, df = p for every family
    _require_fixed_only(m)
    return conditional_loglik(m), m.p


def classical_aic(m):
    """Conventional AIC of a model without random effects.

    Gaussian models use their own (REML or ML) log-likelihood and count the
    residual variance as a parameter.
    """
    _require_fixed_only(m)
    return marginal_aic(m)


def caic(m, config=None):
    """Conditional AIC of a fitted model.

    Gaussian models first lose their zero components. Without random
    effects the log-likelihood is taken at the fitted residual variance and
    the degrees of freedom are the number of fixed effects.

    :param m: Fitted model
    :param config: Config node, defaults to :data:`mixsel.config.cfg`
    :rtype: :class:`CaicResult`
    """
    config = config or cfg
    final = m
    if m.is_gaussian and m.q > 0:
        final = delete_zero_components(m, config=config)
    reduced = final.formula if final is not m else None

    if final.q == 0:
        loglik, df = _fixed_only_parts(final)
    else:
        loglik = conditional_loglik(final)
        if final.is_gaussian:
            df = gaussian_bias_correction(final, config)
        elif final.family == 'poisson':
            df = poisson_bias_correction(final, config)
        else:
            df = bernoulli_bias_correction(final, config)

    result = CaicResult(loglik, df, reduced, model=final)
    logger.info("cAIC of {}: {:.6f} (df {:.6f})".format(
        final.formula.render(), result.caic, result.df))
    return result
