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

from yacs.config import CfgNode as CN
import os

from mixsel.errors import ConfigError

__all__ = ["cfg", "get_config"]

def _env_threads():
    try:
        return max(1, int(os.environ.get('MIXSEL_THREADS', 1)))
    except ValueError:
        return 1

cfg = CN(new_allowed=True)

cfg.MIXSEL = CN(new_allowed=True)
if 'MIXSEL_HOME' in os.environ.keys():
    cfg.MIXSEL.HOME_DIR = os.path.join(os.environ['MIXSEL_HOME'], '')
else:
    cfg.MIXSEL.HOME_DIR = os.path.join(os.path.expanduser('~'), ".mixsel", '')

cfg.OPTIMIZER = CN()
cfg.OPTIMIZER.FATOL = 1e-8 # absolute, on the criterion
cfg.OPTIMIZER.XATOL = 1e-8
cfg.OPTIMIZER.MAX_ITER = 10000
cfg.OPTIMIZER.N_STARTS = 3
cfg.OPTIMIZER.RESTART = True
cfg.OPTIMIZER.INITIAL_STEP = 0.1 # relative size of the initial simplex
cfg.OPTIMIZER.REFIT_STEP = 0.02 # same, for warm started refits
cfg.OPTIMIZER.BOUNDARY_POLISH = 1e-5

cfg.PIRLS = CN()
cfg.PIRLS.MAX_ITER = 100
cfg.PIRLS.TOL = 1e-10
cfg.PIRLS.MAX_HALVINGS = 20

cfg.CAIC = CN()
cfg.CAIC.BOUNDARY_TOL = 1e-6 # multiplied by sigma
cfg.CAIC.SIGMA_PENALTY = 1.0
cfg.CAIC.HESSIAN_STEP = 1e-4
cfg.CAIC.EXACT_CROSS_DERIVATIVE = False # True: exact dG, as the numeric oracle
cfg.CAIC.NUMERIC_STEP = 1e-4 # multiplied by sd(y)
cfg.CAIC.NUMERIC_XATOL = 1e-10
cfg.CAIC.MAX_FAILURE_RATE = 0.05
cfg.CAIC.NUM_CORES = _env_threads()

cfg.STEP = CN()
cfg.STEP.NUM_CORES = _env_threads()
cfg.STEP.IMPROVEMENT_EPS = 1e-10
cfg.STEP.MAX_STEPS = 50
cfg.STEP.MAX_SLOPES = 2
cfg.STEP.PATIENCE = 2 # non-improving steps in a row that end direction 'both'

cfg.OUTPUT = CN()
cfg.OUTPUT.SIGNIFICANT_DIGITS = 6

cfg.LOGGING = CN(new_allowed=True)
cfg.LOGGING.LEVEL = 'WARNING'
cfg.LOGGING.FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'

# Does the home dir have a config with additional param?
# Add them. Or override defaults defined here
if os.path.exists(os.path.join(cfg.MIXSEL.HOME_DIR, "config.yml")):
    cfg.merge_from_file(os.path.join(cfg.MIXSEL.HOME_DIR, "config.yml"))

# Does the cwd have a config with specific param?
if os.path.exists(os.path.join(os.getcwd(), "config.yml")):
    cfg.merge_from_file(os.path.join(os.getcwd(), "config.yml"))

# make immutable
cfg.freeze()

def get_config(opts=None, config_file=None, base=None):
    """Derive a frozen config from the global one.

    :param opts: Flat list of overrides, e.g. ``['CAIC.SIGMA_PENALTY', '0']``
    :type opts: list, optional
    :param config_file: Path of a yaml file merged before `opts`
    :type config_file: str, optional
    :param base: Config to start from, defaults to :data:`cfg`
    :return: New frozen config node
    :raises ConfigError: For unknown keys and values of the wrong type
    :rtype: :class:`yacs.config.CfgNode`
    """
    new = (base if base is not None else cfg).clone()
    new.defrost()
    try:
        if config_file is not None:
            new.merge_from_file(config_file)
        if opts:
            new.merge_from_list(list(opts))
    except (AssertionError, KeyError, ValueError) as e:
        raise ConfigError("Invalid config override: {}".format(e))
    new.freeze()
    return new
