import os
import sys
import unittest

import numpy as np
from scipy.stats import norm

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from fixtures import (bernoulli_data, poisson_data, random_intercept_data,
        random_slope_data, sleepstudy)

from mixsel.dataset import Dataset
from mixsel.design import build_design, lambda_factor
from mixsel.errors import EstimationError, FamilyError
from mixsel.estimation import (conditional_loglik, covariance_factor_blocks,
        fit_glmm, fit_lmm, fit_model, marginal_aic, pls_solve,
        profiled_criterion, refit)
from mixsel.formula import parse_formula


def dense_criterion(design, theta, y, reml):
    """-2 profiled log-likelihood from the marginal covariance directly."""
    X = design.X
    n, p = X.shape
    ZL = design.Z.toarray() @ lambda_factor(design, theta).toarray()
    V0 = np.eye(n) + ZL @ ZL.T
    V0inv = np.linalg.inv(V0)
    XtVX = X.T @ V0inv @ X
    beta = np.linalg.solve(XtVX, X.T @ V0inv @ y)
    r = y - X @ beta
    quad = r @ V0inv @ r
    n_eff = n - p if reml else n
    crit = np.linalg.slogdet(V0)[1] + n_eff * (1 + np.log(2 * np.pi * quad / n_eff))
    if reml:
        crit += np.linalg.slogdet(XtVX)[1]
    return crit


class TestPenalizedLeastSquares(unittest.TestCase):

    def setUp(self):
        self.d = random_slope_data()
        self.design = build_design(parse_formula("y ~ x + (1 + x | g)"), self.d)
        self.y = self.d.column('y')
        self.theta = np.array([1.3, 0.2, 0.6])

    def test_cholesky_identity(self):
        sol = pls_solve(self.design, self.theta, self.y)
        ZL = self.design.Z @ lambda_factor(self.design, self.theta)
        A = (ZL.T @ ZL).toarray() + np.eye(self.design.q)
        L = sol.factor.L.toarray()
        np.testing.assert_allclose(L @ L.T, A, atol=1e-10)
        np.testing.assert_array_equal(np.triu(L, 1), 0.0)

    def test_against_dense_covariance(self):
        for reml in (True, False):
            with self.subTest(reml=reml):
                self.assertAlmostEqual(
                        profiled_criterion(self.theta, self.design, self.y, reml),
                        dense_criterion(self.design, self.theta, self.y, reml),
                        places=8)

    def test_residual(self):
        sol = pls_solve(self.design, self.theta, self.y)
        np.testing.assert_allclose(sol.residual, self.y - sol.eta)
        self.assertAlmostEqual(sol.pwrss,
                sol.residual @ sol.residual + sol.s @ sol.s)


class TestFitLmm(unittest.TestCase):

    def test_no_random_effects(self):
        d = random_intercept_data()
        m = fit_lmm(parse_formula("y ~ x"), d, reml=False)
        X = m.design.X
        y = d.column('y')
        beta, rss = np.linalg.lstsq(X, y, rcond=None)[:2]
        np.testing.assert_allclose(m.beta_hat, beta, atol=1e-10)
        self.assertAlmostEqual(m.sigma2_hat, rss[0] / m.n)
        n = m.n
        self.assertAlmostEqual(m.criterion_value,
                n * (1 + np.log(2 * np.pi * rss[0] / n)))
        self.assertEqual(m.theta_dim, 0)

    def test_optimum_matches_dense(self):
        d = random_intercept_data()
        m = fit_lmm(parse_formula("y ~ x + (1 | g)"), d)
        self.assertTrue(m.converged)
        self.assertAlmostEqual(m.criterion_value,
                dense_criterion(m.design, m.theta_hat, m.y, True), places=8)
        for t in (0.5, 2.0):
            self.assertLessEqual(m.criterion_value,
                    dense_criterion(m.design, m.theta_hat * t, m.y, True))

    def test_refit_same_response(self):
        d = random_slope_data()
        m = fit_lmm(parse_formula("y ~ x + (1 + x | g)"), d)
        again = refit(m, m.y)
        self.assertAlmostEqual(again.criterion_value, m.criterion_value,
                places=6)
        self.assertIs(again.design, m.design)

    def test_refit_wrong_length(self):
        m = fit_lmm(parse_formula("y ~ x + (1 | g)"), random_intercept_data())
        with self.assertRaises(EstimationError):
            refit(m, m.y[:-1])

    def test_categorical_response(self):
        d = Dataset({'y': ['a', 'b', 'a', 'b'], 'x': [1.0, 2.0, 3.0, 4.0],
            'g': ['u', 'u', 'v', 'v']})
        with self.assertRaises(EstimationError):
            fit_lmm(parse_formula("y ~ x + (1 | g)"), d)

    def test_conditional_loglik(self):
        m = fit_lmm(parse_formula("y ~ x + (1 | g)"), random_intercept_data())
        expected = norm.logpdf(m.y, m.linear_predictor, m.sigma).sum()
        self.assertAlmostEqual(conditional_loglik(m), expected)

    def test_covariance_blocks(self):
        m = fit_lmm(parse_formula("y ~ x + (1 + x | g)"), random_slope_data())
        blocks = covariance_factor_blocks(m)
        self.assertEqual(len(blocks), 1)
        self.assertEqual(blocks[0].factor.shape, (2, 2))
        self.assertEqual(blocks[0].factor[0, 1], 0.0)
        vc = m.varcorr()[0]
        T = blocks[0].factor
        np.testing.assert_allclose(vc['variance'],
                m.sigma2_hat * np.diag(T @ T.T))


class TestSleepstudy(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.d = sleepstudy()

    def test_correlated_slope(self):
        m = fit_lmm(parse_formula(
            "Reaction ~ 1 + Days + (1 + Days | Subject)"), self.d)
        self.assertAlmostEqual(m.criterion_value, 1743.628, places=2)
        vc = m.varcorr()[0]
        np.testing.assert_allclose(vc['stddev'], [24.740, 5.922], atol=2e-3)
        self.assertAlmostEqual(vc['corr'][1][0], 0.07, delta=0.01)
        self.assertAlmostEqual(m.sigma, 25.592, delta=2e-3)
        np.testing.assert_allclose(m.beta_hat, [251.41, 10.47], atol=5e-3)

    def test_uncorrelated_slope(self):
        m = fit_lmm(parse_formula(
            "Reaction ~ 1 + Days + (1|Subject) + (0 + Days|Subject)"), self.d)
        self.assertAlmostEqual(m.criterion_value, 1743.669, places=2)
        sds = [vc['stddev'][0] for vc in m.varcorr()]
        np.testing.assert_allclose(sds, [25.051, 5.988], atol=2e-3)
        self.assertAlmostEqual(m.sigma, 25.565, delta=2e-3)

    def test_linear_model_aic(self):
        m = fit_lmm(parse_formula("Reaction ~ Days"), self.d)
        self.assertAlmostEqual(marginal_aic(m), 1899.664, places=2)
        ml = fit_lmm(parse_formula("Reaction ~ Days"), self.d, reml=False)
        self.assertAlmostEqual(marginal_aic(ml), 1906.29, delta=0.01)

    def test_summary(self):
        m = fit_model(parse_formula("Reaction ~ Days + (1 | Subject)"), self.d)
        s = m.summary_dict()
        self.assertEqual(s['nobs'], 180)
        self.assertEqual(s['groups'], {'Subject': 18})
        self.assertEqual(list(s['fixef']), ['(Intercept)', 'Days'])
        self.assertTrue(s['reml'])


class TestFitGlmm(unittest.TestCase):

    def test_poisson_intercept_only(self):
        y = np.array([0.0, 2.0, 3.0, 1.0, 5.0, 4.0, 2.0, 1.0])
        m = fit_glmm(parse_formula("y ~ 1"), Dataset({'y': y}), 'poisson')
        self.assertAlmostEqual(m.beta_hat[0], np.log(y.mean()), places=6)
        self.assertEqual(m.sigma2_hat, 1.0)

    def test_poisson_random_intercept(self):
        d = poisson_data()
        m = fit_glmm(parse_formula("y ~ x + (1 | g)"), d, 'poisson')
        self.assertTrue(np.isfinite(m.criterion_value))
        self.assertEqual(m.family, 'poisson')
        self.assertEqual(len(m.theta_hat), m.theta_dim)
        self.assertEqual(len(m.beta_hat), m.p)
        self.assertEqual(len(m.u_hat), m.q)
        self.assertGreaterEqual(m.theta_hat[0], 0.0)
        again = refit(m, m.y)
        self.assertLessEqual(again.criterion_value, m.criterion_value + 1e-4)

    def test_bernoulli_random_intercept(self):
        d = bernoulli_data()
        m = fit_model(parse_formula("y ~ x + (1 | g)"), d, family='bernoulli')
        self.assertTrue(np.isfinite(m.criterion_value))
        self.assertEqual(len(m.theta_hat), m.theta_dim)
        mu = m.fitted_values
        self.assertTrue(np.all((mu > 0) & (mu < 1)))
        self.assertFalse(m.summary_dict()['reml'])

    def test_invalid_response(self):
        d = Dataset({'y': [0.0, 1.0, 2.0, 1.0], 'g': ['a', 'a', 'b', 'b']})
        with self.assertRaises(FamilyError):
            fit_glmm(parse_formula("y ~ (1 | g)"), d, 'bernoulli')
        with self.assertRaises(FamilyError):
            fit_glmm(parse_formula("y ~ (1 | g)"), d, 'binomial')


if __name__ == '__main__':
    unittest.main(buffer=True)
