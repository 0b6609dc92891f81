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
"""Entry point: targeted-transfer <subcommand> [flags].

Each subcommand is an absl binary; run it with --helpfull to list its flags.
"""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import importlib
import sys


SUBCOMMANDS = {
    'create-dataset': 'targeted_transfer.scripts.create_dataset',
    'train': 'targeted_transfer.scripts.run_training',
    'attack': 'targeted_transfer.scripts.run_attack',
    'finetune': 'targeted_transfer.scripts.run_finetune',
    'evaluate': 'targeted_transfer.scripts.run_evaluation',
    'plane': 'targeted_transfer.scripts.run_plane',
    'sweep-gamma': 'targeted_transfer.scripts.run_gamma_sweep',
    'report': 'targeted_transfer.scripts.run_report',
}


def usage() -> str:
  return 'usage: targeted-transfer {{{}}} [flags]'.format(
      ','.join(SUBCOMMANDS))


def run(argv=None):
  """Dispatch to the binary named by the first argument."""
  if argv is None:
    argv = sys.argv
  if len(argv) < 2 or argv[1] not in SUBCOMMANDS:
    sys.exit(usage())
  module = importlib.import_module(SUBCOMMANDS[argv[1]])
  sys.argv = ['targeted-transfer ' + argv[1]] + list(argv[2:])
  module.run()


if __name__ == '__main__':
  run()
