# Copyright 2024 The Targeted Transfer Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================
"""Tests for the config flags shared by the binaries."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os.path

from absl import flags
from absl.testing import absltest  # pylint: disable=g-bad-import-order
from absl.testing import flagsaver

# pylint: disable=g-bad-import-order
from targeted_transfer import harness
from targeted_transfer.scripts import common


FLAGS = flags.FLAGS


class LoadExperimentConfigTest(absltest.TestCase):

  def setUp(self):
    super(LoadExperimentConfigTest, self).setUp()
    self.path = os.path.join(FLAGS.test_tmpdir, 'experiment.json')
    harness.save_config(
        harness.ExperimentConfig(global_seed=3, n_attack=7), self.path)

  def test_defaults(self):
    self.assertEqual(common.load_experiment_config(),
                     harness.ExperimentConfig())

  def test_config_file(self):
    with flagsaver.flagsaver(config=self.path):
      cfg = common.load_experiment_config()
    self.assertEqual(cfg, harness.ExperimentConfig(global_seed=3, n_attack=7))

  def test_flags_replace_fields(self):
    with flagsaver.flagsaver(config=self.path,
                             victims=['netB', 'netC'],
                             scenario='most-difficult',
                             schemes=['none', 'aaf'],
                             quantize=True,
                             dataset_side=16,
                             epsilon=0.03,
                             loss='logit',
                             attack_seed=4,
                             gamma=0.5,
                             mode='trajectory'):
      cfg = common.load_experiment_config()
    self.assertEqual(cfg.global_seed, 3)
    self.assertEqual(cfg.n_attack, 7)
    self.assertEqual(cfg.victims, ['netB', 'netC'])
    self.assertEqual(cfg.scenario, 'most-difficult')
    self.assertEqual(cfg.schemes, ['none', 'aaf'])
    self.assertTrue(cfg.quantize)
    self.assertEqual(cfg.dataset.side, 16)
    self.assertEqual(cfg.dataset.n, 2000)
    self.assertEqual(cfg.attack.epsilon, 0.03)
    self.assertEqual(cfg.attack.loss, 'logit')
    self.assertEqual(cfg.attack.seed, 4)
    self.assertEqual(cfg.attack.step_size, 2 / 255)
    self.assertEqual(cfg.finetune.gamma, 0.5)
    self.assertEqual(cfg.finetune.mode, 'trajectory')
    self.assertEqual(cfg.finetune.n_ft, 10)

  def test_false_boolean_is_applied(self):
    path = os.path.join(FLAGS.test_tmpdir, 'quantized.json')
    harness.save_config(harness.ExperimentConfig(quantize=True), path)
    with flagsaver.flagsaver(config=path, quantize=False):
      self.assertFalse(common.load_experiment_config().quantize)

  def test_invalid_values(self):
    with flagsaver.flagsaver(schemes=['none', 'pgd']):
      with self.assertRaises(harness.ConfigurationError):
        common.load_experiment_config()
    with flagsaver.flagsaver(surrogates=['netD']):
      with self.assertRaises(harness.ConfigurationError):
        common.load_experiment_config()
    with flagsaver.flagsaver(gamma=1.5):
      with self.assertRaises(harness.ConfigurationError):
        common.load_experiment_config()


if __name__ == '__main__':
  absltest.main()
