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

from mixsel.families.base_family import base_family
from mixsel.families.GaussianFamily import GaussianFamily
from mixsel.families.PoissonFamily import PoissonFamily
from mixsel.families.BernoulliFamily import BernoulliFamily
from mixsel.errors import FamilyError

FAMILIES = {
    'gaussian': GaussianFamily,
    'poisson': PoissonFamily,
    'bernoulli': BernoulliFamily,
}

def get_family(family):
    """Family instance from a name, or the instance itself.

    :param family: 'gaussian', 'poisson', 'bernoulli' or a family object
    :rtype: :class:`base_family`
    """
    if isinstance(family, base_family):
        return family
    try:
        return FAMILIES[str(family).lower()]()
    except KeyError:
        raise FamilyError("Unknown family `{}`. Valid families are: {}".format(
            family, ", ".join(FAMILIES)))
