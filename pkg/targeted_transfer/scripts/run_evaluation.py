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
"""Evaluate saved adversarial examples against every victim."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl import app
from absl import flags
from absl import logging

# pylint: disable=g-bad-import-order
from targeted_transfer import attacks
from targeted_transfer import data
from targeted_transfer import harness
from targeted_transfer.scripts import common


flags.DEFINE_string(
    'checkpoint_dir', '',
    'Directory from which to load victim checkpoints.',
    allow_override=True)
flags.DEFINE_string(
    'bundle_dir', '',
    'Directory holding the adversarial example bundles to evaluate.',
    allow_override=True)
flags.DEFINE_string(
    'output_dir', '',
    'Directory in which to save the report as CSV and markdown.',
    allow_override=True)
flags.DEFINE_string(
    'report_name', 'report',
    'Basename of the report files.',
    allow_override=True)
flags.DEFINE_string(
    'eval_dataset_path', '',
    'Optional HDF5 split on which model disagreement is logged. The '
    'configured synthetic eval split is used if empty.',
    allow_override=True)


FLAGS = flags.FLAGS


def main(unused_argv):
  cfg = common.load_experiment_config()
  names = sorted(set(cfg.surrogates) | set(cfg.victims))
  zoo = harness.load_models(cfg, FLAGS.checkpoint_dir, names)
  eval_data = common.load_split(cfg, data.Split.EVAL, FLAGS.eval_dataset_path)
  harness.log_disagreement(zoo, cfg, eval_data.images)

  bundles = [b for b in attacks.load_bundles(FLAGS.bundle_dir)
             if b.surrogate in cfg.surrogates]
  report = harness.evaluate_bundles(zoo, bundles, cfg)
  paths = harness.save_report(report, FLAGS.output_dir, FLAGS.report_name)
  logging.info('Saved report to %s', ', '.join(sorted(paths.values())))


def run():
  flags.mark_flag_as_required('checkpoint_dir')
  flags.mark_flag_as_required('bundle_dir')
  flags.mark_flag_as_required('output_dir')
  app.run(main)


if __name__ == '__main__':
  run()
