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
from scipy.special import expit
from mixsel.families.base_family import base_family
from mixsel.errors import FamilyError

class BernoulliFamily(base_family):
    """Binary responses with logit link."""

    name = 'bernoulli'
    link = 'logit'

    def linkinv(self, eta):
        return expit(eta)

    def mu_eta(self, eta):
        mu = expit(eta)
        return mu * (1 - mu)

    def variance(self, mu):
        return mu * (1 - mu)

    def loglik(self, y, eta, scale=1.0):
        # y*eta - log(1 + exp(eta)), stable for large |eta|
        return y * eta - np.logaddexp(0.0, eta)

    def validate(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all((y == 0) | (y == 1)):
            raise FamilyError("Bernoulli response must be 0 or 1")

    def initial_eta(self, y):
        mu = (np.asarray(y, dtype=float) + 0.5) / 2
        return np.log(mu / (1 - mu))
