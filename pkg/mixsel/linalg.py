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

import numpy as np
from scipy import linalg, sparse

from mixsel.errors import EstimationError

try:
    from sksparse.cholmod import cholesky as cholmod_cholesky
except ImportError: # optional extra
    cholmod_cholesky = None

__all__ = ["CholeskyFactor", "HAVE_CHOLMOD"]

logger = logging.getLogger('mixsel')

HAVE_CHOLMOD = cholmod_cholesky is not None


class CholeskyFactor():
    """Cholesky factor L of a sparse symmetric positive definite matrix,
    L Lᵗ = A, without fill-reducing permutation.

    Uses CHOLMOD when scikit-sparse is installed, dense LAPACK otherwise.
    Either way `L` is available as a sparse lower triangular matrix.

    :param A: Square symmetric positive definite matrix
    :type A: :class:`scipy.sparse.spmatrix`
    :param use_cholmod: Force (or forbid) the CHOLMOD backend
    :type use_cholmod: bool, optional
    """

    def __init__(self, A, use_cholmod=None):
        A = sparse.csc_matrix(A)
        self.size = A.shape[0]
        if use_cholmod is None:
            use_cholmod = HAVE_CHOLMOD
        self._factor = None
        self._dense = None

        if self.size == 0:
            self.L = sparse.csc_matrix((0, 0))
            return

        if use_cholmod and HAVE_CHOLMOD:
            try:
                self._factor = cholmod_cholesky(A, ordering_method="natural")
            except Exception as e:
                raise EstimationError("Sparse Cholesky failed: {}".format(e))
            self.L = sparse.csc_matrix(self._factor.L())
        else:
            try:
                self._dense = linalg.cholesky(A.toarray(), lower=True)
            except linalg.LinAlgError as e:
                raise EstimationError("Cholesky failed: {}".format(e))
            self.L = sparse.csc_matrix(self._dense)

    def _rhs(self, b):
        if sparse.issparse(b):
            b = b.toarray()
        return np.asarray(b, dtype=float)

    def solve_L(self, b):
        """L⁻¹ b."""
        b = self._rhs(b)
        if self.size == 0:
            return b
        if self._factor is not None:
            return self._factor.solve_L(b, use_LDLt_decomposition=False)
        return linalg.solve_triangular(self._dense, b, lower=True)

    def solve_Lt(self, b):
        """L⁻ᵗ b."""
        b = self._rhs(b)
        if self.size == 0:
            return b
        if self._factor is not None:
            return self._factor.solve_Lt(b, use_LDLt_decomposition=False)
        return linalg.solve_triangular(self._dense, b, lower=True, trans='T')

    def solve(self, b):
        """A⁻¹ b."""
        return self.solve_Lt(self.solve_L(b))

    def logdet(self):
        """log det A = 2 Σ log diag(L)."""
        if self.size == 0:
            return 0.0
        return 2.0 * float(np.sum(np.log(self.L.diagonal())))

    def __getstate__(self):
        # CHOLMOD factors do not pickle; the sparse L is enough to rebuild
        state = self.__dict__.copy()
        if state['_factor'] is not None:
            state['_factor'] = None
            state['_dense'] = self.L.toarray()
        return state
