import os
import unittest
from importlib import reload
from tempfile import TemporaryDirectory

from yacs.config import CfgNode

import mixsel.config
from mixsel.config import get_config
from mixsel.errors import ConfigError


class TestConfig(unittest.TestCase):

    def setUp(self):
        self.cwd = os.getcwd()

    def tearDown(self):
        # back to the defaults, as to not cross-contaminate other tests
        os.chdir(self.cwd)
        for name in ('MIXSEL_HOME', 'MIXSEL_THREADS'):
            if name in os.environ.keys():
                del os.environ[name]
        reload(mixsel.config)

    def test_import_config(self):
        reload(mixsel.config)
        cfg = mixsel.config.cfg

        self.assertIsInstance(cfg, CfgNode)
        self.assertIsInstance(cfg.CAIC, CfgNode)
        self.assertEqual(cfg.CAIC.SIGMA_PENALTY, 1.0)
        self.assertTrue(cfg.is_frozen())

    def test_local_config(self):
        with TemporaryDirectory() as tmpdirname:
            os.chdir(tmpdirname)
            with open('config.yml', 'w') as f:
                f.write('STEP:\n')
                f.write('  MAX_STEPS: 7\n')

            reload(mixsel.config)
            cfg = mixsel.config.cfg
            os.chdir(self.cwd)

        self.assertEqual(cfg.STEP.MAX_STEPS, 7)

    def test_global_config(self):
        with TemporaryDirectory() as tmpdirname:
            os.environ['MIXSEL_HOME'] = tmpdirname
            with open(os.path.join(tmpdirname, 'config.yml'), 'w') as f:
                f.write('TEST:\n')
                f.write('  SCOPE: "GLOBAL"\n')

            reload(mixsel.config)
            cfg = mixsel.config.cfg

            self.assertIsInstance(cfg.TEST, CfgNode)
            self.assertEqual(cfg.TEST.SCOPE, "GLOBAL")
            self.assertEqual(cfg.MIXSEL.HOME_DIR,
                    os.path.join(tmpdirname, ''))

    def test_threads_from_environment(self):
        os.environ['MIXSEL_THREADS'] = '3'
        reload(mixsel.config)
        self.assertEqual(mixsel.config.cfg.CAIC.NUM_CORES, 3)
        os.environ['MIXSEL_THREADS'] = 'many'
        reload(mixsel.config)
        self.assertEqual(mixsel.config.cfg.STEP.NUM_CORES, 1)


class TestGetConfig(unittest.TestCase):

    def test_overrides(self):
        config = get_config(['CAIC.SIGMA_PENALTY', '0.0',
            'OPTIMIZER.N_STARTS', 1])
        self.assertEqual(config.CAIC.SIGMA_PENALTY, 0.0)
        self.assertEqual(config.OPTIMIZER.N_STARTS, 1)
        self.assertTrue(config.is_frozen())
        self.assertEqual(mixsel.config.cfg.OPTIMIZER.N_STARTS, 3)

    def test_base(self):
        base = get_config(['STEP.PATIENCE', 4])
        config = get_config(['STEP.MAX_STEPS', 2], base=base)
        self.assertEqual((config.STEP.PATIENCE, config.STEP.MAX_STEPS), (4, 2))

    def test_file(self):
        with TemporaryDirectory() as tmpdirname:
            path = os.path.join(tmpdirname, 'run.yml')
            with open(path, 'w') as f:
                f.write('CAIC:\n  HESSIAN_STEP: 0.001\n')
            config = get_config(['CAIC.HESSIAN_STEP', '0.01'], config_file=path)
        self.assertEqual(config.CAIC.HESSIAN_STEP, 0.01)

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            get_config(['CAIC.NOT_A_KEY', '1'])
        with self.assertRaises(ConfigError):
            get_config(['CAIC.SIGMA_PENALTY', "'high'"])
        with self.assertRaises(ConfigError):
            get_config(['CAIC.SIGMA_PENALTY'])


if __name__ == '__main__':
    unittest.main(buffer=True)
