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

"""Fitting linear and generalized linear mixed models.

Linear mixed models are fitted by minimizing the profiled (restricted)
deviance over θ, each evaluation solving a penalized least squares problem
in the spherical random effects s (u = Λ_θ s) through the sparse Cholesky
factor L of Λᵗ Zᵗ W Z Λ + I. Generalized models use penalized iteratively
reweighted least squares for the conditional modes and the Laplace
approximation of the marginal likelihood.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import linalg, sparse

from mixsel.config import cfg
from mixsel.design import (build_design, factor_block, lambda_factor)
from mixsel.errors import EstimationError, RankDeficientError
from mixsel.families import get_family
from mixsel.formula import ModelFormula
from mixsel.linalg import CholeskyFactor
from mixsel.optimize import OptimResult, minimize_bounded

__all__ = ["FittedModel", "PlsSolution", "CovarianceBlock", "pls_solve",
        "profiled_criterion", "fit_lmm", "fit_glmm", "fit_model", "refit",
        "conditional_loglik", "covariance_factor_blocks", "marginal_aic"]

logger = logging.getLogger('mixsel')


@dataclass(eq=False)
class PlsSolution:
    """Solution of one penalized (weighted) least squares problem."""
    beta: NDArray[np.floating]
    u: NDArray[np.floating]
    s: NDArray[np.floating]
    factor: CholeskyFactor
    RX: NDArray[np.floating]
    pwrss: float
    ldL2: float
    ldRX2: float
    eta: NDArray[np.floating]

    @property
    def residual(self):
        return self._y - self.eta

    _y: NDArray[np.floating] = field(default=None, repr=False)


@dataclass(frozen=True)
class CovarianceBlock:
    """Per-level relative covariance factor T of one term; the covariance of
    the term's components is σ² T Tᵗ.
    """
    label: str
    group: str
    component_names: tuple
    factor: NDArray[np.floating]
    is_smooth: bool = False


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Immutable result of a mixed model fit.

    :param formula: The fitted formula
    :param family: Family name, 'gaussian', 'poisson' or 'bernoulli'
    :param design: Design matrices the fit used
    :param data: Dataset the design was built from
    :param y: Response vector
    :param theta_hat: Relative covariance parameters
    :param beta_hat: Fixed effects
    :param u_hat: Conditional modes of the random effects
    :param s_hat: Spherical conditional modes, u = Λ s
    :param sigma2_hat: Residual variance, 1 for non-Gaussian families
    :param reml: Whether the criterion is the restricted one
    :param criterion_value: -2 profiled log-likelihood (Laplace for GLMMs)
    :param converged: Optimizer and inner iterations converged
    :param L: Cholesky factor at the optimum
    """
    formula: ModelFormula
    family: str
    design: object
    data: object
    y: NDArray[np.floating]
    theta_hat: NDArray[np.floating]
    beta_hat: NDArray[np.floating]
    u_hat: NDArray[np.floating]
    s_hat: NDArray[np.floating]
    sigma2_hat: float
    reml: bool
    criterion_value: float
    converged: bool
    L: CholeskyFactor
    nfev: int = 0

    @property
    def n(self):
        return self.design.n

    @property
    def p(self):
        return self.design.p

    @property
    def q(self):
        return self.design.q

    @property
    def theta_dim(self):
        return self.design.theta_dim

    @property
    def is_gaussian(self):
        return self.family == 'gaussian'

    @property
    def family_impl(self):
        return get_family(self.family)

    @property
    def sigma(self):
        return float(np.sqrt(self.sigma2_hat))

    @property
    def linear_predictor(self):
        return self.design.X @ self.beta_hat + self.design.Z @ self.u_hat

    @property
    def fitted_values(self):
        return self.family_impl.linkinv(self.linear_predictor)

    def lambda_factor(self):
        return lambda_factor(self.design, self.theta_hat)

    def varcorr(self):
        """Standard deviations and correlations of each random term.

        :return: One dict per term with keys group, label, names, stddev,
            variance and corr (correlation matrix)
        :rtype: list
        """
        out = []
        for block in self.design.blocks:
            T = factor_block(block, self.theta_hat)
            cov = self.sigma2_hat * (T @ T.T)
            sd = np.sqrt(np.diag(cov))
            with np.errstate(divide='ignore', invalid='ignore'):
                corr = cov / np.outer(sd, sd)
            corr = np.where(np.isfinite(corr), corr, 0.0)
            out.append({'group': block.group, 'label': block.label,
                'names': list(block.component_names), 'stddev': sd.tolist(),
                'variance': np.diag(cov).tolist(), 'corr': corr.tolist(),
                'is_smooth': block.is_smooth})
        return out

    def summary_dict(self):
        groups = {}
        for block in self.design.random_blocks():
            groups.setdefault(block.group, block.n_levels)
        return {
            'formula': self.formula.render(),
            'family': self.family,
            'reml': bool(self.reml) if self.is_gaussian else False,
            'criterion': float(self.criterion_value),
            'aic': float(marginal_aic(self)),
            'converged': bool(self.converged),
            'nobs': int(self.n),
            'groups': groups,
            'fixef': dict(zip(self.design.fixed_names,
                [float(b) for b in self.beta_hat])),
            'varcorr': self.varcorr(),
            'sigma': self.sigma if self.is_gaussian else None,
            'theta': [float(t) for t in self.theta_hat],
        }

    def __str__(self):
        return "FittedModel({}, {}, criterion={:.6f})".format(
            self.formula.render(), self.family, self.criterion_value)


def _weighted_zl(design, theta, weights):
    ZL = (design.Z @ lambda_factor(design, theta)).tocsc()
    if weights is None:
        return ZL, ZL
    return ZL, (sparse.diags(np.sqrt(weights)) @ ZL).tocsc()


def _factor(ZLw):
    q = ZLw.shape[1]
    return CholeskyFactor((ZLw.T @ ZLw + sparse.identity(q, format='csc')).tocsc())


def pls_solve(design, theta, y, weights=None):
    """Solve the penalized weighted least squares problem at θ.

    Minimizes ‖W^½(y - Xβ - ZΛs)‖² + ‖s‖² over (β, s).

    :param design: Design matrices
    :param theta: Relative covariance parameters
    :param y: Response (or working response)
    :param weights: Prior weights, ones when omitted
    :rtype: :class:`PlsSolution`
    :raises RankDeficientError: When XᵗV₀⁻¹X is singular
    """
    y = np.asarray(y, dtype=float)
    X = design.X
    n, p = X.shape
    q = design.q
    if weights is None:
        sw = np.ones(n)
    else:
        sw = np.sqrt(np.asarray(weights, dtype=float))
    Xw = X * sw[:, None]
    yw = y * sw

    ZL, ZLw = _weighted_zl(design, theta, weights)
    factor = _factor(ZLw)
    cu = factor.solve_L(ZLw.T @ yw)
    RZX = factor.solve_L(ZLw.T @ Xw).reshape(q, p)

    if p > 0:
        XtVX = Xw.T @ Xw - RZX.T @ RZX
        try:
            RX = linalg.cholesky(XtVX, lower=False)
        except linalg.LinAlgError:
            raise RankDeficientError("Fixed effects cross-product is singular")
        diag = np.abs(np.diag(RX))
        if diag.min() <= 1e-10 * max(diag.max(), 1e-300):
            raise RankDeficientError("Fixed effects cross-product is singular")
        beta = linalg.cho_solve((RX, False), Xw.T @ yw - RZX.T @ cu)
        ldRX2 = 2.0 * float(np.sum(np.log(diag)))
    else:
        RX = np.zeros((0, 0))
        beta = np.zeros(0)
        ldRX2 = 0.0

    s = factor.solve_Lt(cu - RZX @ beta)
    u = lambda_factor(design, theta) @ s if q > 0 else np.zeros(0)
    eta = X @ beta + (ZL @ s if q > 0 else 0.0)
    resid = y - eta
    pwrss = float(np.sum((sw * resid) ** 2) + s @ s)
    return PlsSolution(beta=beta, u=np.asarray(u), s=s, factor=factor, RX=RX,
            pwrss=pwrss, ldL2=factor.logdet(), ldRX2=ldRX2,
            eta=np.asarray(eta, dtype=float), _y=y)


def _effective_n(design, reml):
    n_eff = design.n - (design.p if reml else 0)
    if n_eff <= 0:
        raise EstimationError("Not enough observations ({}) for {} fixed "
                "effects".format(design.n, design.p))
    return n_eff


def _criterion(sol, design, reml):
    n_eff = _effective_n(design, reml)
    if sol.pwrss <= 0:
        raise EstimationError("Penalized residual sum of squares is zero")
    return (sol.ldL2 + (sol.ldRX2 if reml else 0.0)
            + n_eff * (1.0 + np.log(2.0 * np.pi * sol.pwrss / n_eff)))


def profiled_criterion(theta, design, y, reml=True):
    """-2 profiled (restricted) log-likelihood of a linear mixed model.

    :param theta: Relative covariance parameters
    :param design: Design matrices
    :param y: Response
    :param reml: Restricted (True) or full maximum likelihood
    :rtype: float
    """
    return _criterion(pls_solve(design, theta, y), design, reml)


def _fit_gaussian(design, y, reml, config, start=None, step=None, n_starts=None):
    def objective(theta):
        return profiled_criterion(theta, design, y, reml)

    if design.theta_dim == 0:
        res = OptimResult(np.zeros(0), objective(np.zeros(0)), True, 1)
    else:
        x0 = design.theta_start() if start is None else start
        res = minimize_bounded(objective, x0, lower=design.theta_lower,
                config=config, step=step, n_starts=n_starts,
                polish=design.diagonal_theta)
    if not np.isfinite(res.fun):
        raise EstimationError("Profiled criterion is not finite at the optimum")
    sol = pls_solve(design, res.x, y)
    sigma2 = sol.pwrss / _effective_n(design, reml)
    return res, sol, sigma2


def _penalized_deviance(family, y, eta, s):
    return float(-2.0 * np.sum(family.loglik(y, eta)) + s @ s)


@dataclass(eq=False)
class _LaplaceState:
    beta: NDArray[np.floating]
    s: NDArray[np.floating]
    eta: NDArray[np.floating]
    deviance: float
    factor: CholeskyFactor
    converged: bool


def _laplace_state(design, family, theta, y, beta, s, eta, converged):
    w, _ = family.working(y, eta)
    factor = _factor(_weighted_zl(design, theta, w)[1])
    dev = _penalized_deviance(family, y, eta, s) + factor.logdet()
    return _LaplaceState(beta, s, eta, dev, factor, converged)


def _pirls_modes(design, family, theta, beta, y, s0, config):
    """PIRLS for the spherical modes at fixed (θ, β)."""
    pirls = config.PIRLS
    ZL = (design.Z @ lambda_factor(design, theta)).tocsc()
    offset = design.X @ beta
    s = np.zeros(design.q) if s0 is None else np.array(s0, dtype=float)
    eta = offset + ZL @ s
    dev = _penalized_deviance(family, y, eta, s)
    converged = False

    for it in range(pirls.MAX_ITER):
        w, z = family.working(y, eta)
        sw = np.sqrt(w)
        ZLw = (sparse.diags(sw) @ ZL).tocsc()
        factor = _factor(ZLw)
        step = factor.solve(ZLw.T @ (sw * (z - offset))) - s

        accepted = False
        for _ in range(pirls.MAX_HALVINGS + 1):
            s_new = s + step
            eta_new = offset + ZL @ s_new
            dev_new = _penalized_deviance(family, y, eta_new, s_new)
            if np.isfinite(dev_new) and dev_new <= dev:
                accepted = True
                break
            step = step / 2
        if not accepted:
            # no descent left: either converged already or stuck
            converged = np.max(np.abs(step)) < 1e-8
            break
        change = dev - dev_new
        s, eta, dev = s_new, eta_new, dev_new
        if change < pirls.TOL * (abs(dev) + pirls.TOL):
            converged = True
            break

    if not converged:
        logger.debug("PIRLS did not converge at theta={}".format(theta))
    return _laplace_state(design, family, theta, y, beta, s, eta, converged)


def _pirls_joint(design, family, theta, y, config):
    """PIRLS for (β, s) jointly at fixed θ."""
    pirls = config.PIRLS
    eta = family.initial_eta(y)
    beta = s = None
    dev = np.inf
    converged = False

    for it in range(pirls.MAX_ITER):
        w, z = family.working(y, eta)
        sol = pls_solve(design, theta, z, weights=w)
        if beta is None:
            beta, s, eta = sol.beta, sol.s, sol.eta
            dev = _penalized_deviance(family, y, eta, s)
            continue

        t = 1.0
        accepted = False
        for _ in range(pirls.MAX_HALVINGS + 1):
            beta_c = beta + t * (sol.beta - beta)
            s_c = s + t * (sol.s - s)
            eta_c = eta + t * (sol.eta - eta)
            dev_c = _penalized_deviance(family, y, eta_c, s_c)
            if np.isfinite(dev_c) and dev_c <= dev:
                accepted = True
                break
            t /= 2
        if not accepted:
            converged = t * np.max(np.abs(sol.eta - eta)) < 1e-8
            break
        change = dev - dev_c
        beta, s, eta, dev = beta_c, s_c, eta_c, dev_c
        if change < pirls.TOL * (abs(dev) + pirls.TOL):
            converged = True
            break

    return _laplace_state(design, family, theta, y, beta, s, eta, converged)


def _fit_glmm(design, y, family, config, warm=None):
    k = design.theta_dim
    p = design.p

    if k == 0:
        state = _pirls_joint(design, family, np.zeros(0), y, config)
        return OptimResult(np.zeros(0), state.deviance, state.converged, 1), state

    if warm is None:
        stage1 = minimize_bounded(
                lambda th: _pirls_joint(design, family, th, y, config).deviance,
                design.theta_start(), lower=design.theta_lower, config=config,
                polish=design.diagonal_theta)
        first = _pirls_joint(design, family, stage1.x, y, config)
        x0 = np.concatenate([stage1.x, first.beta])
        s0 = first.s
        step = None
        logger.debug("GLMM theta-only stage: {:.6f}".format(stage1.fun))
    else:
        x0 = np.concatenate([warm.theta_hat, warm.beta_hat])
        s0 = warm.s_hat
        step = config.OPTIMIZER.REFIT_STEP

    def objective(x):
        return _pirls_modes(design, family, x[:k], x[k:], y, s0,
                config).deviance

    lower = np.concatenate([design.theta_lower, np.full(p, -np.inf)])
    polish = np.concatenate([design.diagonal_theta, np.zeros(p, dtype=bool)])
    res = minimize_bounded(objective, x0, lower=lower, config=config,
            step=step, n_starts=1, polish=polish)
    state = _pirls_modes(design, family, res.x[:k], res.x[k:], y, s0, config)
    # the optimizer ran over (theta, beta); beta lives on in the state
    out = OptimResult(np.array(res.x[:k]), res.fun,
            res.converged and state.converged, res.nfev, res.message)
    return out, state


def _validate_response(y, family, n):
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise EstimationError("Response has length {}, expected {}".format(
            y.size, n))
    get_family(family).validate(y)
    return y


def _response(f, d):
    if d.is_categorical(f.response):
        raise EstimationError("Response {} is not numeric".format(f.response))
    return d.column(f.response)


def _assemble(f, d, design, y, family, reml, res, sol_beta, s, sigma2,
        criterion, factor, converged):
    u = lambda_factor(design, res.x) @ s if design.q > 0 else np.zeros(0)
    return FittedModel(formula=f, family=family, design=design, data=d, y=y,
            theta_hat=np.asarray(res.x, dtype=float), beta_hat=sol_beta,
            u_hat=np.asarray(u, dtype=float), s_hat=np.asarray(s, dtype=float),
            sigma2_hat=float(sigma2), reml=reml,
            criterion_value=float(criterion), converged=bool(converged),
            L=factor, nfev=res.nfev)


def _gaussian_model(f, d, design, y, reml, config, **kwargs):
    res, sol, sigma2 = _fit_gaussian(design, y, reml, config, **kwargs)
    if not res.converged:
        logger.warning("Optimizer did not converge for {}: {}".format(
            f.render(), res.message))
    model = _assemble(f, d, design, y, 'gaussian', reml, res, sol.beta, sol.s,
            sigma2, res.fun, sol.factor, res.converged)
    logger.info("Fitted {} ({}): criterion {:.6f}".format(f.render(),
        'REML' if reml else 'ML', model.criterion_value))
    return model


def _glmm_model(f, d, design, y, family, config, warm=None):
    fam = get_family(family)
    res, state = _fit_glmm(design, y, fam, config, warm=warm)
    if not res.converged:
        logger.warning("GLMM fit did not converge for {}".format(f.render()))
    model = _assemble(f, d, design, y, fam.name, False, res, state.beta,
            state.s, 1.0, state.deviance, state.factor, res.converged)
    logger.info("Fitted {} ({}): Laplace deviance {:.6f}".format(f.render(),
        fam.name, model.criterion_value))
    return model


def fit_lmm(f, d, reml=True, config=None):
    """Fit a linear mixed model.

    :param f: Model formula
    :type f: :class:`mixsel.formula.ModelFormula`
    :param d: Data
    :type d: :class:`mixsel.dataset.Dataset`
    :param reml: Restricted maximum likelihood (default) or ML
    :param config: Config node, defaults to :data:`mixsel.config.cfg`
    :rtype: :class:`FittedModel`
    """
    config = config or cfg
    design = build_design(f, d)
    y = _validate_response(_response(f, d), 'gaussian', design.n)
    return _gaussian_model(f, d, design, y, reml, config)


def fit_glmm(f, d, family, config=None):
    """Fit a Poisson or Bernoulli mixed model by Laplace approximation.

    :param f: Model formula
    :param d: Data
    :param family: 'poisson' or 'bernoulli'
    :param config: Config node, defaults to :data:`mixsel.config.cfg`
    :rtype: :class:`FittedModel`
    """
    config = config or cfg
    fam = get_family(family)
    if fam.name == 'gaussian':
        return fit_lmm(f, d, config=config)
    design = build_design(f, d)
    y = _validate_response(_response(f, d), fam, design.n)
    return _glmm_model(f, d, design, y, fam, config)


def fit_model(f, d, family='gaussian', reml=True, config=None):
    """Dispatch to :func:`fit_lmm` or :func:`fit_glmm` by family."""
    if get_family(family).name == 'gaussian':
        return fit_lmm(f, d, reml=reml, config=config)
    return fit_glmm(f, d, family, config=config)


def refit(m, new_y, config=None, cold=False):
    """Refit a model on a new response, warm started at its estimates.

    :param m: Fitted model
    :param new_y: Response of the same length
    :param config: Config node, defaults to :data:`mixsel.config.cfg`
    :param cold: Start from the default starting values instead
    :rtype: :class:`FittedModel`
    """
    config = config or cfg
    y = _validate_response(new_y, m.family, m.n).copy()
    if m.is_gaussian:
        if cold:
            return _gaussian_model(m.formula, m.data, m.design, y, m.reml,
                    config)
        return _gaussian_model(m.formula, m.data, m.design, y, m.reml, config,
                start=m.theta_hat, step=config.OPTIMIZER.REFIT_STEP, n_starts=1)
    return _glmm_model(m.formula, m.data, m.design, y, m.family, config,
            warm=None if cold else m)


def conditional_loglik(m):
    """Σ log f(y_i | μ̂_i) with μ̂ from fixed effects and conditional modes.

    :rtype: float
    """
    scale = m.sigma2_hat if m.is_gaussian else 1.0
    return float(np.sum(m.family_impl.loglik(m.y, m.linear_predictor, scale)))


def covariance_factor_blocks(m):
    """Per-level lower triangular factors of every term at θ̂.

    :rtype: list of :class:`CovarianceBlock`
    """
    return [CovarianceBlock(b.label, b.group, b.component_names,
        factor_block(b, m.theta_hat), b.is_smooth) for b in m.design.blocks]


def marginal_aic(m):
    """AIC from the marginal (Laplace) likelihood, for display."""
    k = m.p + m.theta_dim + (1 if m.is_gaussian else 0)
    return float(m.criterion_value + 2 * k)
