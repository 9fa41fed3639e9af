import os
import sys
import unittest

import numpy as np
import pandas as pd
from scipy import sparse

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from fixtures import crossed_data, random_slope_data, sleepstudy

from mixsel.dataset import Dataset
from mixsel.design import (build_design, covariance_to_theta, dtheta_pattern,
        factor_block, lambda_factor, theta_to_covariance, truncated_poly_basis)
from mixsel.errors import (BoundaryError, DesignError, MissingVariableError,
        RankDeficientError)
from mixsel.formula import INTERCEPT, parse_formula


class TestBuildDesign(unittest.TestCase):

    def setUp(self):
        self.d = random_slope_data()
        self.f = parse_formula("y ~ x + (1 + x | g)")
        self.design = build_design(self.f, self.d)

    def test_dimensions(self):
        design = self.design
        self.assertEqual(design.n, 64)
        self.assertEqual(design.p, 2)
        self.assertEqual(design.q, 16)
        self.assertEqual(design.theta_dim, 3)
        self.assertEqual(design.fixed_names, (INTERCEPT, "x"))

    def test_level_major_columns(self):
        design = self.design
        self.assertEqual(design.z_columns[0], ("(1 + x | g)", "g1", INTERCEPT))
        self.assertEqual(design.z_columns[1], ("(1 + x | g)", "g1", "x"))
        self.assertEqual(design.z_columns[2], ("(1 + x | g)", "g2", INTERCEPT))
        Z = design.Z.toarray()
        x = self.d.column('x')
        np.testing.assert_array_equal(Z[:8, 0], np.ones(8))
        np.testing.assert_array_equal(Z[:8, 1], x[:8])
        np.testing.assert_array_equal(Z[8:, :2], 0.0)

    def test_theta_template(self):
        design = self.design
        np.testing.assert_array_equal(design.diagonal_theta,
                [True, False, True])
        np.testing.assert_array_equal(design.theta_start(), [1.0, 0.0, 1.0])
        np.testing.assert_array_equal(design.theta_lower, [0.0, -np.inf, 0.0])

    def test_lambda_factor(self):
        Lam = lambda_factor(self.design, np.array([2.0, 0.5, 3.0])).toarray()
        self.assertEqual(Lam.shape, (16, 16))
        np.testing.assert_array_equal(Lam[:2, :2], [[2.0, 0.0], [0.5, 3.0]])
        np.testing.assert_array_equal(Lam[2:4, 2:4], [[2.0, 0.0], [0.5, 3.0]])
        self.assertEqual(np.count_nonzero(Lam), 8 * 3)
        np.testing.assert_array_equal(np.triu(Lam, 1), 0.0)

    def test_lambda_lower_triangular_for_random_theta(self):
        d = crossed_data()
        design = build_design(parse_formula(
            "y ~ x + (1 + x | g) + (1 | h) + (0 + x | h)"), d)
        rng = np.random.RandomState(12)
        for _ in range(1000):
            theta = rng.normal(size=design.theta_dim)
            theta[design.diagonal_theta] = np.abs(theta[design.diagonal_theta])
            Lam = lambda_factor(design, theta)
            self.assertEqual(sparse.triu(Lam, 1).nnz, 0)

    def test_lambda_factor_length(self):
        with self.assertRaises(ValueError):
            lambda_factor(self.design, np.ones(2))

    def test_dtheta_pattern(self):
        P = dtheta_pattern(self.design, 1).toarray()
        np.testing.assert_array_equal(P[:2, :2], [[0.0, 1.0], [1.0, 0.0]])
        self.assertEqual(P.sum(), 16)
        P0 = dtheta_pattern(self.design, 0).toarray()
        self.assertEqual(P0[0, 0], 1.0)
        self.assertEqual(P0.sum(), 8)
        with self.assertRaises(IndexError):
            dtheta_pattern(self.design, 3)

    def test_covariance_parameters(self):
        theta = np.array([1.2, -0.4, 0.7])
        phi = theta_to_covariance(self.design, theta)
        T = factor_block(self.design.blocks[0], theta)
        C = T @ T.T
        np.testing.assert_allclose(phi, [C[0, 0], C[1, 0], C[1, 1]])
        np.testing.assert_allclose(covariance_to_theta(self.design, phi), theta)

    def test_covariance_outside_boundary(self):
        with self.assertRaises(BoundaryError):
            covariance_to_theta(self.design, np.array([1.0, 2.0, 1.0]))


class TestDesignErrors(unittest.TestCase):

    def test_missing_variable(self):
        d = random_slope_data()
        with self.assertRaises(MissingVariableError):
            build_design(parse_formula("y ~ z + (1 | g)"), d)

    def test_numeric_group(self):
        d = Dataset({'y': [1.0, 2.0, 3.0], 'g': [1.0, 2.0, 1.0]})
        with self.assertRaises(DesignError):
            build_design(parse_formula("y ~ (1 | g)"), d)

    def test_single_level_group(self):
        d = Dataset(pd.DataFrame({'y': [1.0, 2.0], 'g': ['a', 'a']}))
        with self.assertRaises(DesignError):
            build_design(parse_formula("y ~ (1 | g)"), d)

    def test_categorical_slope(self):
        d = Dataset(pd.DataFrame({'y': [1.0, 2.0, 3.0, 4.0],
            'h': ['u', 'v', 'u', 'v'], 'g': ['a', 'a', 'b', 'b']}))
        with self.assertRaises(DesignError):
            build_design(parse_formula("y ~ (0 + h | g)"), d)

    def test_rank_deficient(self):
        d = Dataset({'y': [1.0, 2.0, 3.0], 'x': [1.0, 2.0, 3.0],
            'z': [2.0, 4.0, 6.0]})
        with self.assertRaises(RankDeficientError):
            build_design(parse_formula("y ~ x + z"), d)


class TestFixedEffects(unittest.TestCase):

    def test_treatment_coding(self):
        d = Dataset(pd.DataFrame({'y': [1.0, 2.0, 3.0, 4.0],
            'h': ['u', 'v', 'w', 'u']}))
        design = build_design(parse_formula("y ~ h"), d)
        self.assertEqual(design.fixed_names, (INTERCEPT, "hv", "hw"))
        np.testing.assert_array_equal(design.X[:, 1], [0, 1, 0, 0])

    def test_full_coding_without_intercept(self):
        d = Dataset(pd.DataFrame({'y': [1.0, 2.0, 3.0, 4.0],
            'h': ['u', 'v', 'w', 'u']}))
        design = build_design(parse_formula("y ~ 0 + h"), d)
        self.assertEqual(design.fixed_names, ("hu", "hv", "hw"))

    def test_sleepstudy(self):
        design = build_design(parse_formula(
            "Reaction ~ Days + (Days | Subject)"), sleepstudy())
        self.assertEqual((design.n, design.p, design.q, design.theta_dim),
                (180, 2, 36, 3))


class TestSmoothBasis(unittest.TestCase):

    def test_truncated_basis(self):
        x = np.linspace(0, 1, 50)
        basis = truncated_poly_basis(x, g=3, k=10)
        self.assertEqual(basis.fixed_columns.shape, (50, 4))
        self.assertEqual(basis.random_columns.shape, (50, 10))
        self.assertTrue(np.all(np.diff(basis.knots) > 0))
        np.testing.assert_array_equal(basis.random_columns[0], 0.0)
        j = 3
        expected = np.maximum(x - basis.knots[j], 0) ** 3
        np.testing.assert_allclose(basis.random_columns[:, j], expected)

    def test_too_few_unique_values(self):
        with self.assertRaises(DesignError):
            truncated_poly_basis(np.repeat(np.arange(11.0), 3), k=10)

    def test_smooth_in_design(self):
        rng = np.random.RandomState(0)
        x = rng.uniform(size=40)
        d = Dataset({'y': rng.normal(size=40), 'x': x})
        design = build_design(parse_formula("y ~ s(x)"), d)
        self.assertEqual(design.p, 4)
        self.assertEqual(design.q, 10)
        self.assertEqual(design.theta_dim, 1)
        self.assertTrue(design.blocks[0].is_smooth)
        self.assertEqual(len(design.random_blocks()), 0)
        self.assertEqual(len(design.smooth_blocks()), 1)


if __name__ == '__main__':
    unittest.main(buffer=True)
