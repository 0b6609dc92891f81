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
"""Integration test for the command line binaries."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import glob
import os.path

from absl import flags
from absl.testing import flagsaver
from absl.testing import absltest  # pylint: disable=g-bad-import-order
import numpy as np
import pandas as pd

# pylint: disable=g-bad-import-order
from targeted_transfer import attacks
from targeted_transfer import data
from targeted_transfer import finetune
from targeted_transfer import harness
from targeted_transfer import models
from targeted_transfer import utils
from targeted_transfer.scripts import cli
from targeted_transfer.scripts import create_dataset
from targeted_transfer.scripts import run_attack
from targeted_transfer.scripts import run_evaluation
from targeted_transfer.scripts import run_finetune
from targeted_transfer.scripts import run_gamma_sweep
from targeted_transfer.scripts import run_plane
from targeted_transfer.scripts import run_report
from targeted_transfer.scripts import run_training


FLAGS = flags.FLAGS


def tiny_config():
  return harness.ExperimentConfig(
      dataset=data.DatasetSpec(n=20, side=16),
      n_eval=4,
      n_attack=2,
      models=[harness.ModelSpec('netA', 'netA', seed=1, epochs=1,
                                batch_size=10),
              harness.ModelSpec('netB', 'netB', seed=2, epochs=1,
                                batch_size=10)],
      attack=attacks.AttackConfig(iters=2),
      finetune=finetune.FinetuneConfig(n_masks=2, n_wu=1, n_ft=2),
      surrogates=['netA'],
      victims=['netA', 'netB']).validate()


class PipelineTest(absltest.TestCase):

  def test(self):
    root = FLAGS.test_tmpdir
    config_path = os.path.join(root, 'experiment.json')
    harness.save_config(tiny_config(), config_path)
    data_dir = os.path.join(root, 'data')
    checkpoint_dir = os.path.join(root, 'checkpoints')
    bundle_dir = os.path.join(root, 'bundles')
    report_dir = os.path.join(root, 'report')
    plane_dir = os.path.join(root, 'plane')

    cifar_path = os.path.join(root, 'data_batch_1.bin')
    cifar_pixels = np.random.RandomState(0).randint(0, 256, (10, 3, 32, 32))
    with open(cifar_path, 'wb') as f:
      f.write(data.serialize_cifar10(
          data.Dataset(cifar_pixels / 255, np.arange(10), 10)))

    with flagsaver.flagsaver(config=config_path, output_dir=data_dir,
                             cifar10_path=cifar_path):
      create_dataset.main([])
    attack_data = data.load_dataset(os.path.join(data_dir, 'attack.h5'))
    self.assertLen(attack_data, 2)
    self.assertEqual(attack_data.split, data.Split.ATTACK)
    self.assertTrue(os.path.exists(os.path.join(data_dir, 'train.h5')))

    with flagsaver.flagsaver(
        config=config_path,
        checkpoint_dir=checkpoint_dir,
        dataset_path=os.path.join(data_dir, 'train.h5'),
        eval_dataset_path=os.path.join(data_dir, 'eval.h5')):
      run_training.main([])
    self.assertTrue(os.path.exists(os.path.join(checkpoint_dir, 'netA.aafm')))
    self.assertTrue(os.path.exists(os.path.join(checkpoint_dir, 'netB.aafm')))
    metrics = pd.read_csv(os.path.join(checkpoint_dir, 'metrics.csv'))
    self.assertEqual(metrics['model'].tolist(), ['netA', 'netB'])
    self.assertIn('eval_accuracy', metrics.columns)

    cifar_train_path = os.path.join(data_dir, 'cifar10_train.h5')
    cifar_checkpoint_dir = os.path.join(root, 'cifar_checkpoints')
    with flagsaver.flagsaver(
        config=config_path,
        checkpoint_dir=cifar_checkpoint_dir,
        dataset_path=cifar_train_path,
        eval_dataset_path=cifar_train_path,
        models=['netA']):
      run_training.main([])
    cifar_model = models.load_checkpoint(
        os.path.join(cifar_checkpoint_dir, 'netA.aafm'))
    self.assertEqual(cifar_model.arch.input_shape, (3, 32, 32))

    attack_flags = dict(config=config_path,
                        checkpoint_dir=checkpoint_dir,
                        output_dir=bundle_dir,
                        dataset_path=os.path.join(data_dir, 'attack.h5'),
                        export_png=True)
    with flagsaver.flagsaver(**attack_flags):
      run_attack.main([])
    self.assertLen(attacks.load_bundles(bundle_dir), 2)
    with flagsaver.flagsaver(**attack_flags):
      run_finetune.main([])
    bundles = attacks.load_bundles(bundle_dir)
    self.assertLen(bundles, 8)
    self.assertLen(glob.glob(os.path.join(bundle_dir, '*.png')), 8)
    for bundle in bundles:
      image = attack_data[bundle.image_id].pixels
      self.assertLessEqual(np.max(np.abs(bundle.tensor - image)),
                           16 / 255 + 1e-6)

    with flagsaver.flagsaver(config=config_path,
                             checkpoint_dir=checkpoint_dir,
                             bundle_dir=bundle_dir,
                             output_dir=report_dir):
      run_evaluation.main([])
    with open(os.path.join(report_dir, 'report.csv'), 'rb') as f:
      report = harness.parse_report(f.read())
    self.assertLen(report, 8)
    self.assertEqual(report['scheme'].tolist(),
                     ['none', 'ila', 'fft', 'aaf'] * 2)
    self.assertTrue((report['n_images'] == 2).all())

    with flagsaver.flagsaver(config=config_path,
                             checkpoint_dir=checkpoint_dir,
                             output_dir=plane_dir,
                             grid=5):
      run_plane.main([])
    plane = pd.read_csv(os.path.join(plane_dir, 'plane.csv'))
    self.assertEqual(list(plane.columns), ['x', 'y', 'value'])
    summary = utils.read_json(os.path.join(plane_dir, 'plane.json'))
    self.assertEqual(summary['ensemble'], ['netB'])
    self.assertEqual(len(plane), np.prod(summary['grid_shape']))
    for size in summary['grid_shape']:
      self.assertBetween(size, 5, 5 + 3)
    for name in ['ae', 'fft', 'aaf']:
      self.assertTrue(os.path.exists(os.path.join(plane_dir, name + '.png')))

    with flagsaver.flagsaver(config=config_path,
                             checkpoint_dir=checkpoint_dir,
                             output_dir=report_dir,
                             gammas=['0', '0.5', '1']):
      run_gamma_sweep.main([])
    sweep = pd.read_csv(os.path.join(report_dir, 'gamma_sweep.csv'))
    self.assertEqual(sweep['gamma'].tolist(), [0.0, 0.5, 1.0])

    markdown_path = os.path.join(report_dir, 'merged.md')
    with flagsaver.flagsaver(
        report_paths=[os.path.join(report_dir, 'report.csv')],
        report_format='markdown',
        output_path=markdown_path):
      run_report.main([])
    with open(markdown_path) as f:
      self.assertIn('netA (white-box)', f.read())

  def test_cli_usage(self):
    with self.assertRaises(SystemExit):
      cli.run(['targeted-transfer', 'fly'])
    with self.assertRaises(SystemExit):
      cli.run(['targeted-transfer'])


if __name__ == '__main__':
  absltest.main()
