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

"""Design matrices X and Z, and the template of the relative covariance
factor.

θ is laid out block by block in formula order (random terms first, then
smooths). Within a block of per-level dimension d the entries of the lower
triangular factor T are taken column by column, diagonal entry first, so a
2x2 block reads ``(T00, T10, T11)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import sparse

from mixsel.errors import (BoundaryError, DesignError, MissingVariableError,
        RankDeficientError)
from mixsel.formula import INTERCEPT

__all__ = ["BlockTemplate", "DesignMatrices", "SmoothBasis", "build_design",
        "lambda_factor", "dtheta_pattern", "truncated_poly_basis",
        "factor_block", "theta_to_covariance", "covariance_to_theta"]

logger = logging.getLogger('mixsel')


def _lower_positions(dim):
    return [(r, c) for c in range(dim) for r in range(c, dim)]


@dataclass(frozen=True)
class BlockTemplate:
    """One random term (or smooth) as a block of Λ_θ.

    :param label: Rendered term, e.g. ``"(1 + Days | Subject)"``
    :param group: Grouping variable, or the smooth label for smooths
    :param component_names: Per-level components
    :param levels: Level labels of the grouping variable (knot numbers for
        smooths)
    :param theta_offset: Index of the first θ entry of this block
    :param z_offset: Index of the first Z column of this block
    :param is_smooth: Whether the block holds truncated spline coefficients
    """
    label: str
    group: str
    component_names: tuple
    levels: tuple
    theta_offset: int
    z_offset: int
    is_smooth: bool = False

    @property
    def dim(self):
        return len(self.component_names)

    @property
    def n_levels(self):
        return len(self.levels)

    @property
    def n_theta(self):
        return self.dim * (self.dim + 1) // 2

    @property
    def q(self):
        return self.n_levels * self.dim

    @property
    def positions(self):
        """(row, column) in T of each θ entry of the block, in θ order."""
        return _lower_positions(self.dim)

    @property
    def theta_slice(self):
        return slice(self.theta_offset, self.theta_offset + self.n_theta)

    @property
    def diagonal_theta(self):
        """Global θ indices of the diagonal entries of T."""
        return [self.theta_offset + i
                for i, (r, c) in enumerate(self.positions) if r == c]


@dataclass(frozen=True)
class SmoothBasis:
    """Truncated polynomial basis of one covariate.

    :param fixed_columns: n x (g+1) matrix ``[1, x, ..., x^g]``
    :param random_columns: n x k matrix of ``(x - knot_j)_+^g``
    :param knots: Ascending interior knots
    """
    fixed_columns: NDArray[np.floating]
    random_columns: NDArray[np.floating]
    knots: NDArray[np.floating]


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    """Everything a fit needs from formula and data.

    ``lambda_rows``, ``lambda_cols`` and ``lambda_index`` list every
    structural nonzero of Λ_θ together with the θ entry that fills it.
    """
    X: NDArray[np.floating]
    Z: sparse.csc_matrix
    blocks: tuple
    theta_dim: int
    fixed_names: tuple
    z_columns: tuple
    lambda_rows: NDArray[np.int64]
    lambda_cols: NDArray[np.int64]
    lambda_index: NDArray[np.int64]
    smooth_bases: tuple = ()

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.Z.shape[1]

    @property
    def diagonal_theta(self):
        """Boolean mask of θ entries on the diagonal of Λ_θ."""
        mask = np.zeros(self.theta_dim, dtype=bool)
        for b in self.blocks:
            mask[b.diagonal_theta] = True
        return mask

    @property
    def theta_lower(self):
        return np.where(self.diagonal_theta, 0.0, -np.inf)

    def theta_start(self):
        """Identity blocks: unit diagonal, zero off diagonal."""
        return self.diagonal_theta.astype(float)

    def random_blocks(self):
        return [b for b in self.blocks if not b.is_smooth]

    def smooth_blocks(self):
        return [b for b in self.blocks if b.is_smooth]


def truncated_poly_basis(x, g=3, k=10):
    """Truncated polynomial basis with knots at quantiles of the unique
    values of `x`.

    :param x: Covariate values
    :param g: Polynomial degree
    :param k: Number of interior knots
    :rtype: :class:`SmoothBasis`
    :raises DesignError: When `x` has fewer than k + 2 unique values
    """
    x = np.asarray(x, dtype=float)
    unique = np.unique(x)
    if len(unique) < k + 2:
        raise DesignError("Too few unique values ({}) for {} knots".format(
            len(unique), k))
    knots = np.quantile(unique, np.arange(1, k + 1) / (k + 1))
    if np.any(np.diff(knots) <= 0):
        raise DesignError("Knots are not strictly ascending")

    fixed = np.vander(x, g + 1, increasing=True)
    random = np.maximum(x[:, None] - knots[None, :], 0.0) ** g
    return SmoothBasis(fixed, random, knots)


def _fixed_columns(f, d):
    cols, names = [], []
    n = d.n
    if f.intercept:
        cols.append(np.ones(n))
        names.append(INTERCEPT)

    full_coding = not f.intercept
    for name in f.fixed_names:
        if d.is_categorical(name):
            codes = d.codes(name)
            levels = d.levels(name)
            first = 0 if full_coding else 1
            full_coding = False
            for li in range(first, len(levels)):
                cols.append((codes == li).astype(float))
                names.append("{}{}".format(name, levels[li]))
        else:
            cols.append(d.column(name))
            names.append(name)
    return cols, names


def build_design(f, d):
    """Build X, Z and the Λ_θ template of a formula on a dataset.

    :param f: The model formula
    :type f: :class:`mixsel.formula.ModelFormula`
    :param d: The data
    :type d: :class:`mixsel.dataset.Dataset`
    :rtype: :class:`DesignMatrices`
    :raises MissingVariableError: Formula names an absent column
    :raises DesignError: Non-categorical grouping variable, single level
        group, categorical slope, or an unusable smooth covariate
    """
    for name in f.variables():
        if name not in d:
            raise MissingVariableError("Variable {} not in dataset".format(name))
    n = d.n

    cols, names = _fixed_columns(f, d)

    z_blocks = []
    blocks = []
    z_columns = []
    lrows, lcols, lidx = [], [], []
    theta_offset = 0
    z_offset = 0

    def add_block(block, zmat):
        nonlocal theta_offset, z_offset
        dim = block.dim
        for level in range(block.n_levels):
            base = block.z_offset + level * dim
            for pi, (r, c) in enumerate(block.positions):
                lrows.append(base + r)
                lcols.append(base + c)
                lidx.append(block.theta_offset + pi)
            for comp in block.component_names:
                z_columns.append((block.label, block.levels[level], comp))
        blocks.append(block)
        z_blocks.append(zmat)
        theta_offset += block.n_theta
        z_offset += block.q

    for term in f.randoms:
        if not d.is_categorical(term.group):
            raise DesignError("Grouping variable {} is not categorical".format(
                term.group))
        levels = d.levels(term.group)
        if len(levels) < 2:
            raise DesignError("Grouping variable {} has fewer than 2 "
                    "levels".format(term.group))
        codes = d.codes(term.group)
        values = []
        for comp in term.component_names:
            if comp == INTERCEPT:
                values.append(np.ones(n))
            else:
                if d.is_categorical(comp):
                    raise DesignError("Random slope variable {} is "
                            "categorical".format(comp))
                values.append(d.column(comp))
        dim = len(values)
        rows = np.repeat(np.arange(n), dim)
        zcols = z_offset + (codes[:, None] * dim + np.arange(dim)[None, :]).ravel()
        data = np.column_stack(values).ravel()
        zmat = sparse.csc_matrix((data, (rows, zcols - z_offset)),
                shape=(n, len(levels) * dim))
        block = BlockTemplate(term.render(), term.group, term.component_names,
                tuple(levels), theta_offset, z_offset)
        add_block(block, zmat)

    bases = []
    added_ones = f.intercept
    for term in f.smooths:
        if d.is_categorical(term.variable):
            raise DesignError("Smooth variable {} is categorical".format(
                term.variable))
        basis = truncated_poly_basis(d.column(term.variable), term.g, term.k)
        bases.append((term.variable, basis))
        first = 1 if added_ones else 0
        added_ones = True
        label = term.render()
        for j in range(first, term.g + 1):
            cols.append(basis.fixed_columns[:, j])
            names.append("{}.{}".format(label, j) if j > 0 else INTERCEPT)
        block = BlockTemplate(label, label, (label,),
                tuple(str(i + 1) for i in range(term.k)), theta_offset,
                z_offset, is_smooth=True)
        add_block(block, sparse.csc_matrix(basis.random_columns))

    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    if X.shape[1] > 0 and np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficientError("Fixed effects design is rank deficient "
                "({} columns, rank {})".format(X.shape[1],
                    np.linalg.matrix_rank(X)))
    Z = sparse.hstack(z_blocks, format='csc') if z_blocks \
            else sparse.csc_matrix((n, 0))

    design = DesignMatrices(X=X, Z=Z, blocks=tuple(blocks),
            theta_dim=theta_offset, fixed_names=tuple(names),
            z_columns=tuple(z_columns),
            lambda_rows=np.asarray(lrows, dtype=np.int64),
            lambda_cols=np.asarray(lcols, dtype=np.int64),
            lambda_index=np.asarray(lidx, dtype=np.int64),
            smooth_bases=tuple(bases))
    logger.debug("Design for {}: n={} p={} q={} theta_dim={}".format(
        f.render(), design.n, design.p, design.q, design.theta_dim))
    return design


def lambda_factor(design, theta):
    """Assemble the sparse lower triangular Λ_θ.

    :param design: Design holding the template
    :param theta: Vector of length ``design.theta_dim``
    :rtype: :class:`scipy.sparse.csc_matrix`
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (design.theta_dim,):
        raise ValueError("theta has length {}, expected {}".format(
            theta.size, design.theta_dim))
    q = design.q
    return sparse.csc_matrix((theta[design.lambda_index],
        (design.lambda_rows, design.lambda_cols)), shape=(q, q))


def dtheta_pattern(design, j):
    """Symmetric 0/1 pattern of the positions of parameter `j` (zero based)
    in the per-level covariance blocks.

    :rtype: :class:`scipy.sparse.csc_matrix`
    """
    if not 0 <= j < design.theta_dim:
        raise IndexError("Parameter index {} out of range".format(j))
    mask = design.lambda_index == j
    rows = design.lambda_rows[mask]
    cols = design.lambda_cols[mask]
    q = design.q
    half = sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(q, q))
    pattern = (half + half.T).tocsc()
    pattern.data[:] = 1.0
    return pattern


def factor_block(block, theta):
    """Per-level lower triangular factor T of a block."""
    T = np.zeros((block.dim, block.dim))
    vals = np.asarray(theta, dtype=float)[block.theta_slice]
    for v, (r, c) in zip(vals, block.positions):
        T[r, c] = v
    return T


def theta_to_covariance(design, theta):
    """Map θ to φ, the lower triangle entries of every T Tᵗ, in θ order."""
    phi = np.zeros(design.theta_dim)
    for block in design.blocks:
        T = factor_block(block, theta)
        C = T @ T.T
        phi[block.theta_slice] = [C[r, c] for r, c in block.positions]
    return phi


def covariance_to_theta(design, phi):
    """Inverse of :func:`theta_to_covariance`.

    :raises BoundaryError: When a block is not positive definite, or a
        variance is negative
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.zeros(design.theta_dim)
    for block in design.blocks:
        vals = phi[block.theta_slice]
        if block.dim == 1:
            if vals[0] < 0:
                raise BoundaryError("Negative variance for {}".format(
                    block.label))
            theta[block.theta_slice] = np.sqrt(vals)
            continue
        C = np.zeros((block.dim, block.dim))
        for v, (r, c) in zip(vals, block.positions):
            C[r, c] = v
            C[c, r] = v
        try:
            T = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            raise BoundaryError("Covariance block of {} is not positive "
                    "definite".format(block.label))
        theta[block.theta_slice] = [T[r, c] for r, c in block.positions]
    return theta
