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
"""Binary for training the model zoo."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os.path

from absl import app
from absl import flags
from absl import logging
import pandas as pd

# pylint: disable=g-bad-import-order
from targeted_transfer import data
from targeted_transfer import harness
from targeted_transfer import models
from targeted_transfer import utils
from targeted_transfer.scripts import common


flags.DEFINE_string(
    'checkpoint_dir', '',
    'Directory in which to save <model>.aafm checkpoints and metrics.csv.',
    allow_override=True)
flags.DEFINE_string(
    'dataset_path', '',
    'Optional HDF5 training split written by create-dataset. The configured '
    'synthetic train split is used if empty.',
    allow_override=True)
flags.DEFINE_string(
    'eval_dataset_path', '',
    'Optional HDF5 evaluation split, used for per-epoch eval accuracy.',
    allow_override=True)
flags.DEFINE_list(
    'models', [],
    'Names of the models to train. All configured models if empty.',
    allow_override=True)


FLAGS = flags.FLAGS


def main(unused_argv):
  cfg = common.load_experiment_config()
  names = FLAGS.models or [spec.name for spec in cfg.models]

  logging.info('Loading training data')
  train_data = common.load_split(cfg, data.Split.TRAIN, FLAGS.dataset_path)
  eval_data = common.load_split(cfg, data.Split.EVAL, FLAGS.eval_dataset_path)
  logging.info('Inputs have shape %r', train_data.images.shape)

  utils.makedirs(FLAGS.checkpoint_dir)
  harness.save_config(cfg, os.path.join(FLAGS.checkpoint_dir, 'config.json'))

  all_metrics = []
  for name in names:
    spec = cfg.model_spec(name)
    logging.info('Starting training loop for %s', name)
    model, metrics = harness.train_model(spec, train_data, eval_data)
    models.save_checkpoint(
        model, harness.checkpoint_path(FLAGS.checkpoint_dir, spec))
    logging.info('%s reaches eval accuracy %.4f', name,
                 models.accuracy(model, eval_data))
    metrics.insert(0, 'model', name)
    all_metrics.append(metrics)

  logging.info('Saving CSV with metrics')
  csv_path = os.path.join(FLAGS.checkpoint_dir, 'metrics.csv')
  pd.concat(all_metrics, ignore_index=True).to_csv(csv_path, index=False)

  logging.info('Finished')


def run():
  flags.mark_flag_as_required('checkpoint_dir')
  app.run(main)


if __name__ == '__main__':
  run()
