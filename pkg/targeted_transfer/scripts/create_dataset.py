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
"""Run a beam pipeline to write the synthetic dataset splits as HDF5."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os.path

from absl import app
from absl import flags
from absl import logging
import apache_beam as beam

# pylint: disable=g-bad-import-order
from targeted_transfer import data
from targeted_transfer import harness
from targeted_transfer.scripts import common


flags.DEFINE_string(
    'output_dir', '',
    'Directory in which to save <split>.h5 files.',
    allow_override=True)
flags.DEFINE_list(
    'splits', [s.value for s in data.Split],
    'Splits to write.',
    allow_override=True)
flags.DEFINE_string(
    'cifar10_path', '',
    'Optional CIFAR-10 binary batch to convert into cifar10_<split>.h5 as '
    'well.',
    allow_override=True)
flags.DEFINE_enum(
    'cifar10_split', data.Split.TRAIN.value, [s.value for s in data.Split],
    'Split tag of the converted CIFAR-10 batch.',
    allow_override=True)


FLAGS = flags.FLAGS


def main(_, runner=None):
  if runner is None:
    # must create before flags are used
    runner = beam.runners.DirectRunner()

  cfg = common.load_experiment_config()
  splits = [data.Split(name) for name in FLAGS.splits]

  def write_split(split, cfg=cfg, output_dir=FLAGS.output_dir):
    dataset = harness.dataset_for(cfg, split)
    path = os.path.join(output_dir, split.value + '.h5')
    data.save_dataset(dataset, path)
    logging.info('Wrote %d %s images to %s', len(dataset), split.value, path)
    return path

  with beam.Pipeline(runner=runner) as pipeline:
    _ = (
        pipeline
        | 'create' >> beam.Create(splits)
        | 'write' >> beam.Map(common.count_start_finish(write_split,
                                                        name='write_split'))
    )

  if FLAGS.cifar10_path:
    dataset = data.load_cifar10(FLAGS.cifar10_path, FLAGS.cifar10_split)
    path = os.path.join(FLAGS.output_dir,
                        'cifar10_{}.h5'.format(FLAGS.cifar10_split))
    data.save_dataset(dataset, path)
    logging.info('Converted %d CIFAR-10 %s images to %s', len(dataset),
                 FLAGS.cifar10_split, path)


def run():
  flags.mark_flag_as_required('output_dir')
  app.run(main)


if __name__ == '__main__':
  run()
