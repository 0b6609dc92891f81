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
"""Sweep the averaging decay and save the held-out success rate per value."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os.path

from absl import app
from absl import flags
from absl import logging

# pylint: disable=g-bad-import-order
from targeted_transfer import data
from targeted_transfer import harness
from targeted_transfer import utils
from targeted_transfer.scripts import common


flags.DEFINE_string(
    'checkpoint_dir', '',
    'Directory from which to load checkpoints.',
    allow_override=True)
flags.DEFINE_string(
    'output_dir', '',
    'Directory in which to save gamma_sweep.csv.',
    allow_override=True)
flags.DEFINE_list(
    'gammas', [str(g) for g in harness.DEFAULT_GAMMAS],
    'Decay values to sweep.',
    allow_override=True)
flags.DEFINE_string(
    'dataset_path', '',
    'Optional HDF5 attack split. The configured synthetic attack split is '
    'used if empty.',
    allow_override=True)


FLAGS = flags.FLAGS


def main(unused_argv):
  cfg = common.load_experiment_config()
  gammas = [float(g) for g in FLAGS.gammas]
  attack_data = common.load_split(cfg, data.Split.ATTACK, FLAGS.dataset_path)
  sweep = harness.gamma_sweep(cfg, FLAGS.checkpoint_dir, gammas,
                              attack_data=attack_data)

  utils.makedirs(FLAGS.output_dir)
  path = os.path.join(FLAGS.output_dir, 'gamma_sweep.csv')
  sweep.to_csv(path, index=False, float_format='%.4f')
  logging.info('Saved %d sweep rows to %s', len(sweep), path)


def run():
  flags.mark_flag_as_required('checkpoint_dir')
  flags.mark_flag_as_required('output_dir')
  app.run(main)


if __name__ == '__main__':
  run()
