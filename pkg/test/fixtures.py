import os
import unittest

import numpy as np
import pandas as pd

from mixsel.dataset import Dataset, load_csv
from mixsel.design import truncated_poly_basis

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', 'data')

SLOW = os.environ.get('MIXSEL_SLOW_TESTS') == '1'
slow = unittest.skipUnless(SLOW, "set MIXSEL_SLOW_TESTS=1 to run")


def data_file(name):
    path = os.path.join(DATA_DIR, name)
    if not os.path.exists(path):
        raise unittest.SkipTest("{} not available".format(name))
    return path


def sleepstudy():
    return load_csv(data_file('sleepstudy.csv'), factors=['Subject'])


def pastes():
    return load_csv(data_file('Pastes.csv'), factors=['batch', 'sample'])


def grouseticks():
    return load_csv(data_file('grouseticks.csv'),
            factors=['INDEX', 'BROOD', 'LOCATION'])


def _groups(n_groups, per_group):
    return np.repeat(['g{}'.format(i + 1) for i in range(n_groups)], per_group)


def random_intercept_data(n_groups=4, per_group=6, sd_group=2.0, sd=1.0, seed=1):
    rng = np.random.RandomState(seed)
    n = n_groups * per_group
    x = rng.uniform(-1, 1, n)
    b = rng.normal(0, sd_group, n_groups)
    y = 1.0 + 0.5 * x + np.repeat(b, per_group) + rng.normal(0, sd, n)
    return Dataset(pd.DataFrame({'y': y, 'x': x, 'g': _groups(n_groups, per_group)}))


def random_slope_data(n_groups=8, per_group=8, seed=2):
    rng = np.random.RandomState(seed)
    n = n_groups * per_group
    x = np.tile(np.linspace(0, 1, per_group), n_groups)
    b0 = rng.normal(0, 1.5, n_groups)
    b1 = rng.normal(0, 1.0, n_groups)
    g = np.repeat(np.arange(n_groups), per_group)
    y = 2.0 + x + b0[g] + b1[g] * x + rng.normal(0, 0.5, n)
    return Dataset(pd.DataFrame({'y': y, 'x': x, 'g': _groups(n_groups, per_group)}))


def crossed_data(seed=3):
    """Two crossed grouping factors h (4 levels) and g (5 levels)."""
    rng = np.random.RandomState(seed)
    g = np.repeat(np.arange(5), 12)
    h = np.tile(np.arange(4), 15)
    x = rng.normal(size=60)
    y = (1.0 + 0.3 * x + rng.normal(0, 1.0, 5)[g] + rng.normal(0, 0.8, 4)[h]
            + rng.normal(0, 0.7, 60))
    return Dataset(pd.DataFrame({'y': y, 'x': x,
        'g': ['g{}'.format(i) for i in g], 'h': ['h{}'.format(i) for i in h]}))


def equal_slopes_data():
    """Group intercepts differ, slopes are identical and the within group
    noise is orthogonal to both, so the slope variance is estimated at zero.
    """
    x = np.array([-1.0, 0.0, 1.0, -1.0, 0.0, 1.0])
    pattern = np.array([1.0, -2.0, 1.0, -1.0, 2.0, -1.0])
    intercepts = [0.0, 3.0, -2.0, 5.0, 1.0]
    scales = [0.5, 1.0, 0.8, 1.2, 0.6]
    y = np.concatenate([a + 2.0 * x + c * pattern
        for a, c in zip(intercepts, scales)])
    return Dataset(pd.DataFrame({'y': y, 'x': np.tile(x, 5),
        'g': _groups(5, 6)}))


def zero_between_data(n_groups=5, per_group=4, seed=4):
    """Residuals sum to zero within every group and are orthogonal to x, so
    the between group variance is estimated at zero.
    """
    rng = np.random.RandomState(seed)
    n = n_groups * per_group
    g = np.repeat(np.arange(n_groups), per_group)
    x = rng.uniform(0, 3, n)
    e = rng.normal(size=n)
    e -= np.bincount(g, e)[g] / per_group
    xc = x - np.bincount(g, x)[g] / per_group
    e -= xc * (e @ xc) / (xc @ xc)
    y = 5.0 + 2.0 * x + e
    return Dataset(pd.DataFrame({'y': y, 'x': x, 'g': _groups(n_groups, per_group)}))


def poisson_data(n_groups=6, per_group=5, seed=5):
    rng = np.random.RandomState(seed)
    n = n_groups * per_group
    x = rng.uniform(-1, 1, n)
    b = rng.normal(0, 0.7, n_groups)
    eta = 0.8 + 0.5 * x + np.repeat(b, per_group)
    y = rng.poisson(np.exp(eta)).astype(float)
    return Dataset(pd.DataFrame({'y': y, 'x': x, 'g': _groups(n_groups, per_group)}))


def bernoulli_data(n_groups=8, per_group=5, seed=6):
    rng = np.random.RandomState(seed)
    n = n_groups * per_group
    x = rng.normal(size=n)
    b = rng.normal(0, 1.0, n_groups)
    eta = 0.2 + 1.0 * x + np.repeat(b, per_group)
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(float)
    return Dataset(pd.DataFrame({'y': y, 'x': x, 'g': _groups(n_groups, per_group)}))


def smooth_data(nonlinear=True, n_groups=10, per_group=10, seed=7):
    rng = np.random.RandomState(seed)
    n = n_groups * per_group
    x = rng.uniform(0, 1, n)
    f = np.sin(2 * np.pi * x) if nonlinear else 1.5 * x
    y = f + np.repeat(rng.normal(0, 0.5, n_groups), per_group) \
            + rng.normal(0, 0.3, n)
    return Dataset(pd.DataFrame({'y': y, 'x': x, 'g': _groups(n_groups, per_group)}))


def guwahba():
    return load_csv(data_file('guWahba.csv'), factors=['fac'])


def _orthogonal_noise(rng, columns, scale):
    """Noise orthogonal to every column of `columns`."""
    e = rng.normal(0, scale, columns.shape[0])
    return e - columns @ np.linalg.lstsq(columns, e, rcond=None)[0]


def zero_components_data(per_cell=4, seed=8):
    """Crossed g1 (4 levels) and g2 (3 levels) with intercept effects only.

    The covariates v1, v2, v3 and x are centred within every g1:g2 cell and
    the noise is orthogonal to all random effect columns of
    y ~ (1 + x | g2) + (1 + v1 + v2 + v3 | g1), so every slope variance is
    estimated at zero.
    """
    rng = np.random.RandomState(seed)
    g1 = np.repeat(np.arange(4), 3 * per_cell)
    g2 = np.tile(np.repeat(np.arange(3), per_cell), 4)
    cell = g1 * 3 + g2
    n = len(cell)
    covariates = {}
    for name in ('v1', 'v2', 'v3', 'x'):
        v = rng.normal(size=n)
        covariates[name] = v - np.bincount(cell, v)[cell] / per_cell
    cells = np.eye(12)[cell]
    slopes = [covariates[v][:, None] * np.eye(4)[g1] for v in ('v1', 'v2', 'v3')]
    slopes.append(covariates['x'][:, None] * np.eye(3)[g2])
    e = _orthogonal_noise(rng, np.hstack([cells] + slopes), 1.0)
    y = (10.0 + np.array([-3.0, 1.0, 2.5, -0.5])[g1]
            + np.array([2.0, -1.5, -0.5])[g2] + e)
    frame = pd.DataFrame(dict(y=y, g1=['a{}'.format(i) for i in g1],
        g2=['b{}'.format(i) for i in g2], **covariates))
    return Dataset(frame)


def cubic_data(n=60, seed=9):
    """A cubic in x plus noise orthogonal to the truncated cubic basis of x,
    so the smooth variance of y ~ s(x) is estimated at zero while the cubic
    fits far better than a line."""
    rng = np.random.RandomState(seed)
    x = rng.uniform(0, 3, n)
    basis = truncated_poly_basis(x)
    e = _orthogonal_noise(rng, np.hstack([basis.fixed_columns, basis.random_columns]), 0.5)
    y = 1.0 + x - 2.0 * x ** 2 + 0.8 * x ** 3 + e
    return Dataset(pd.DataFrame({'y': y, 'x': x}))
