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
"""Sample the held-out ensemble's target logit around one image's examples.

Writes plane.csv (x,y,value), plane.json with the anchor coordinates, and a
PNG of each anchor.
"""
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
from targeted_transfer import landscape
from targeted_transfer import utils
from targeted_transfer.scripts import common


flags.DEFINE_string(
    'checkpoint_dir', '',
    'Directory from which to load checkpoints.',
    allow_override=True)
flags.DEFINE_string(
    'output_dir', '',
    'Directory in which to save the plane.',
    allow_override=True)
flags.DEFINE_string(
    'dataset_path', '',
    'Optional HDF5 attack split. The configured synthetic split is used if '
    'empty.',
    allow_override=True)
flags.DEFINE_integer(
    'image_id', 0,
    'Index of the attack image.',
    allow_override=True)
flags.DEFINE_string(
    'surrogate', '',
    'Model used to craft the anchors. The first configured surrogate if empty.',
    allow_override=True)
flags.DEFINE_list(
    'ensemble', [],
    'Models whose target logits are averaged. The held-out victims if empty.',
    allow_override=True)
flags.DEFINE_integer(
    'grid', 41,
    'Number of uniform lattice points along each axis. The anchors\' own '
    'coordinates are added as extra nodes, so an axis has between grid and '
    'grid + 3 points.',
    allow_override=True)
flags.DEFINE_float(
    'margin', 0.2,
    'Fraction of the anchor extent added on every side.',
    allow_override=True)
flags.DEFINE_boolean(
    'boxed', False,
    'Project lattice points into the epsilon ball and pixel box first.',
    allow_override=True)


FLAGS = flags.FLAGS


def main(unused_argv):
  cfg = common.load_experiment_config()
  surrogate_name = FLAGS.surrogate or cfg.surrogates[0]
  ensemble_names = (FLAGS.ensemble or
                    harness.held_out_victims(cfg, surrogate_name))
  if not ensemble_names:
    raise harness.ConfigurationError('the plane needs at least one model')
  zoo = harness.load_models(cfg, FLAGS.checkpoint_dir,
                            sorted(set(ensemble_names) | {surrogate_name}))

  attack_data = common.load_split(cfg, data.Split.ATTACK, FLAGS.dataset_path)
  clean, label = attack_data[FLAGS.image_id]
  logging.info('Crafting anchors for image %d on %s', FLAGS.image_id,
               surrogate_name)
  anchors = harness.plane_anchors(zoo[surrogate_name], clean, label,
                                  FLAGS.image_id, cfg)

  boxed = {'clean': clean, 'epsilon': cfg.attack.epsilon} if FLAGS.boxed else {}
  plane = landscape.logit_plane(
      anchors.ae, anchors.ae_fft, anchors.ae_aaf,
      [zoo[name] for name in ensemble_names], anchors.y_t,
      grid=FLAGS.grid, margin=FLAGS.margin, **boxed)

  utils.makedirs(FLAGS.output_dir)
  with open(os.path.join(FLAGS.output_dir, 'plane.csv'), 'wb') as f:
    f.write(plane.to_csv())
  summary = plane.anchors_json()
  summary.update(surrogate=surrogate_name, ensemble=list(ensemble_names),
                 image_id=FLAGS.image_id,
                 values={name: plane.value_at(name)
                         for name in landscape.ANCHOR_NAMES})
  utils.write_json(summary, os.path.join(FLAGS.output_dir, 'plane.json'))
  for name, image in zip(landscape.ANCHOR_NAMES, anchors[1:]):
    with open(os.path.join(FLAGS.output_dir, name + '.png'), 'wb') as f:
      f.write(data.export_png(image))
  logging.info('Ensemble target logit at the anchors: %s', summary['values'])


def run():
  flags.mark_flag_as_required('checkpoint_dir')
  flags.mark_flag_as_required('output_dir')
  app.run(main)


if __name__ == '__main__':
  run()
