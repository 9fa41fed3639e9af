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
from mixsel.families.base_family import base_family
from mixsel.errors import FamilyError

class GaussianFamily(base_family):
    """Normal responses with identity link."""

    name = 'gaussian'
    link = 'identity'

    def linkinv(self, eta):
        return np.asarray(eta, dtype=float)

    def mu_eta(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def loglik(self, y, eta, scale=1.0):
        return -0.5 * (np.log(2 * np.pi * scale) + (y - eta) ** 2 / scale)

    def validate(self, y):
        if not np.all(np.isfinite(y)):
            raise FamilyError("Gaussian response must be finite")

    def initial_eta(self, y):
        return np.asarray(y, dtype=float).copy()
