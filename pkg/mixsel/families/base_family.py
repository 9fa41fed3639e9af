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

from abc import ABC, abstractmethod
import numpy as np

class base_family(ABC):
    """Abstract base class for a response family with its link.

    Families used for GLMMs work on the linear predictor η; the Gaussian
    family is only used for conditional log-likelihoods and dispatch.
    """

    name = None
    link = None

    @abstractmethod
    def linkinv(self, eta):
        """Mean μ = h(η)."""
        return

    @abstractmethod
    def mu_eta(self, eta):
        """dμ/dη."""
        return

    @abstractmethod
    def variance(self, mu):
        """Variance function V(μ)."""
        return

    @abstractmethod
    def loglik(self, y, eta, scale=1.0):
        """Pointwise log density of `y` given linear predictor `eta`.

        :rtype: :class:`numpy.ndarray`
        """
        return

    @abstractmethod
    def validate(self, y):
        """Raise :class:`mixsel.errors.FamilyError` for responses outside
        the support of the family.
        """
        return

    @abstractmethod
    def initial_eta(self, y):
        """Starting linear predictor for iterative fits."""
        return

    def working(self, y, eta):
        """IRLS weights and working response for a given η.

        :return: (weights, z) with z = η + (y - μ)/(dμ/dη)
        """
        mu = self.linkinv(eta)
        dmu = np.maximum(self.mu_eta(eta), 1e-300)
        weights = dmu ** 2 / np.maximum(self.variance(mu), 1e-300)
        return weights, eta + (y - mu) / dmu

    def __str__(self):
        return "{} ( {} )".format(self.name, self.link)
