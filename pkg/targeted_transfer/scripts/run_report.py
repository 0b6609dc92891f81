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
"""Merge CSV reports and render them as CSV or markdown."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import sys

from absl import app
from absl import flags
import pandas as pd

from targeted_transfer import harness  # pylint: disable=g-bad-import-order


flags.DEFINE_list(
    'report_paths', [],
    'CSV reports written by the evaluate binary.',
    allow_override=True)
flags.DEFINE_enum(
    'report_format', 'markdown', ['csv', 'markdown'],
    'Output format.',
    allow_override=True)
flags.DEFINE_string(
    'output_path', '',
    'File to write. Standard output if empty.',
    allow_override=True)


FLAGS = flags.FLAGS


def main(unused_argv):
  if not FLAGS.report_paths:
    raise app.UsageError('--report_paths must name at least one CSV report')
  reports = []
  for path in FLAGS.report_paths:
    with open(path, 'rb') as f:
      reports.append(harness.parse_report(f.read()))
  report = pd.concat(reports, ignore_index=True)
  blob = harness.emit_report(report, FLAGS.report_format)
  if FLAGS.output_path:
    with open(FLAGS.output_path, 'wb') as f:
      f.write(blob)
  else:
    sys.stdout.write(blob.decode('utf-8'))


def run():
  app.run(main)


if __name__ == '__main__':
  run()
