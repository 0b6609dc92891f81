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
"""Run a beam pipeline to fine-tune baseline adversarial examples.

Each image's refined baseline is recomputed from its derived seed, so this
does not depend on the output of the attack binary.
"""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl import app
from absl import flags
from absl import logging
import apache_beam as beam

# pylint: disable=g-bad-import-order
from targeted_transfer import harness
from targeted_transfer.scripts import common


flags.DEFINE_string(
    'checkpoint_dir', '',
    'Directory from which to load surrogate checkpoints.',
    allow_override=True)
flags.DEFINE_string(
    'output_dir', '',
    'Directory to which to save fine-tuned example bundles.',
    allow_override=True)
flags.DEFINE_string(
    'dataset_path', '',
    'Optional HDF5 attack split. The configured synthetic split is used if '
    'empty.',
    allow_override=True)
flags.DEFINE_boolean(
    'export_png', False,
    'Also save every adversarial example as an 8-bit PNG.',
    allow_override=True)


FLAGS = flags.FLAGS

FINETUNE_SCHEMES = [harness.Scheme.ILA.value, harness.Scheme.FFT.value,
                    harness.Scheme.AAF.value]


def main(_, runner=None):
  if runner is None:
    # must create before flags are used
    runner = beam.runners.DirectRunner()

  cfg = common.load_experiment_config()
  count = common.craft_pipeline(
      runner, cfg, FINETUNE_SCHEMES, FLAGS.checkpoint_dir, FLAGS.output_dir,
      FLAGS.dataset_path, FLAGS.export_png)
  logging.info('Saved %d fine-tuned examples to %s', count, FLAGS.output_dir)


def run():
  flags.mark_flag_as_required('checkpoint_dir')
  flags.mark_flag_as_required('output_dir')
  app.run(main)


if __name__ == '__main__':
  run()
