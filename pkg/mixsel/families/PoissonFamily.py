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

import numpy as np
from scipy.special import gammaln
from mixsel.families.base_family import base_family
from mixsel.errors import FamilyError

# exp() overflows past this
MAX_ETA = 700.0

class PoissonFamily(base_family):
    """Counts with log link."""

    name = 'poisson'
    link = 'log'

    def linkinv(self, eta):
        return np.exp(np.minimum(eta, MAX_ETA))

    def mu_eta(self, eta):
        return self.linkinv(eta)

    def variance(self, mu):
        return mu

    def loglik(self, y, eta, scale=1.0):
        eta = np.minimum(eta, MAX_ETA)
        return y * eta - np.exp(eta) - gammaln(y + 1)

    def validate(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(y != np.round(y)) or \
                not np.all(np.isfinite(y)):
            raise FamilyError("Poisson response must be nonnegative integers")

    def initial_eta(self, y):
        return np.log(np.asarray(y, dtype=float) + 0.1)
