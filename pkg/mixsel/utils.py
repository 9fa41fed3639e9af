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

import logging
import math
from concurrent.futures import ThreadPoolExecutor

logger = logging.getLogger('mixsel')

def setup_logging(level='WARNING', fmt=None):
    """Attach a stream handler to the `mixsel` logger.

    Library modules only log; front ends decide where the records go.

    :param level: Name or number of the logging level
    :param fmt: Format string for the records
    """
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.WARNING)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(fmt or 
            '%(asctime)s %(name)s %(levelname)s %(message)s'))
        logger.addHandler(handler)
    logger.setLevel(level)
    return logger

def parallel_map(func, items, num_cores=1):
    """Apply `func` to every item, in a thread pool when `num_cores` > 1.

    Results come back in the order of `items`, whatever order the calls
    finish in.

    :param func: Callable taking a single item
    :param items: Iterable of items
    :param num_cores: Maximum number of worker threads
    :type num_cores: int
    :rtype: list
    """
    items = list(items)
    if num_cores is None or int(num_cores) <= 1 or len(items) <= 1:
        return [func(i) for i in items]

    with ThreadPoolExecutor(max_workers=min(int(num_cores), len(items))) as ex:
        return list(ex.map(func, items))

def signif(value, digits=6):
    """Format a number with a fixed number of significant digits."""
    if value is None:
        return 'NA'
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return '{:.{}g}'.format(value, digits)
