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
"""Flags and helpers shared by the command line binaries."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import dataclasses
import os.path

from absl import flags
from absl import logging
import apache_beam as beam

from targeted_transfer import attacks  # pylint: disable=g-bad-import-order
from targeted_transfer import data  # pylint: disable=g-bad-import-order
from targeted_transfer import finetune  # pylint: disable=g-bad-import-order
from targeted_transfer import harness  # pylint: disable=g-bad-import-order


# NOTE: allow_override=True lets us import multiple binaries for the purpose
# of running integration tests. This is safe since we're strict about only
# using FLAGS inside main().

flags.DEFINE_string(
    'config', '',
    'Path to an ExperimentConfig JSON file. Defaults are used if empty. The '
    'flags below replace single fields of this config when they are set.',
    allow_override=True)

# ExperimentConfig
flags.DEFINE_integer(
    'global_seed', None,
    'Seed from which every per-image random stream is derived.',
    allow_override=True)
flags.DEFINE_integer(
    'n_eval', None,
    'Number of synthetic eval images.',
    allow_override=True)
flags.DEFINE_integer(
    'n_attack', None,
    'Number of synthetic attack images.',
    allow_override=True)
flags.DEFINE_list(
    'surrogates', None,
    'Models on which adversarial examples are crafted.',
    allow_override=True)
flags.DEFINE_list(
    'victims', None,
    'Models on which adversarial examples are evaluated.',
    allow_override=True)
flags.DEFINE_enum(
    'scenario', None, [s.value for s in attacks.Scenario],
    'How the target class of each image is chosen.',
    allow_override=True)
flags.DEFINE_list(
    'schemes', None,
    'Fine-tuning schemes, a subset of {}.'.format(','.join(
        harness.SCHEME_ORDER)),
    allow_override=True)
flags.DEFINE_boolean(
    'quantize', None,
    'Whether to round examples to 8 bits before victims classify them.',
    allow_override=True)
flags.DEFINE_boolean(
    'train_missing', None,
    'Whether to train models whose checkpoint is missing.',
    allow_override=True)

# DatasetSpec
flags.DEFINE_integer(
    'dataset_seed', None,
    'Seed of the synthetic dataset.',
    allow_override=True)
flags.DEFINE_integer(
    'dataset_n', None,
    'Number of synthetic training images.',
    allow_override=True)
flags.DEFINE_integer(
    'dataset_k', None,
    'Number of synthetic classes.',
    allow_override=True)
flags.DEFINE_integer(
    'dataset_side', None,
    'Height and width of synthetic images in pixels.',
    allow_override=True)

# AttackConfig
flags.DEFINE_float(
    'epsilon', None,
    'L-infinity budget, with pixels in [0, 1].',
    allow_override=True)
flags.DEFINE_float(
    'step_size', None,
    'Step size of the baseline attack.',
    allow_override=True)
flags.DEFINE_integer(
    'iters', None,
    'Iterations of the baseline attack. If unset, 160 when the example is '
    'fine-tuned afterwards and 200 otherwise.',
    allow_override=True)
flags.DEFINE_enum(
    'loss', None, [k.value for k in attacks.LossKind],
    'Targeted loss of the baseline attack.',
    allow_override=True)
flags.DEFINE_float(
    'mi_decay', None,
    'Momentum decay of the baseline attack.',
    allow_override=True)
flags.DEFINE_integer(
    'ti_kernel', None,
    'Odd size of the Gaussian kernel smoothing input gradients.',
    allow_override=True)
flags.DEFINE_float(
    'ti_sigma', None,
    'Standard deviation of the gradient smoothing kernel.',
    allow_override=True)
flags.DEFINE_float(
    'di_prob', None,
    'Probability of a random resize-and-pad at each attack iteration.',
    allow_override=True)
flags.DEFINE_float(
    'di_max_ratio', None,
    'Largest padded size of the resize-and-pad, relative to the image.',
    allow_override=True)
flags.DEFINE_integer(
    'attack_seed', None,
    'Seed of standalone baseline attacks.',
    allow_override=True)

# FinetuneConfig
flags.DEFINE_integer(
    'n_ft', None,
    'Fine-tuning steps whose snapshots are averaged.',
    allow_override=True)
flags.DEFINE_integer(
    'n_wu', None,
    'Warm-up fine-tuning steps before averaging starts.',
    allow_override=True)
flags.DEFINE_float(
    'gamma', None,
    'Decay of the snapshot average, in [0, 1].',
    allow_override=True)
flags.DEFINE_float(
    'beta', None,
    'Weight of the original-class aggregate gradient.',
    allow_override=True)
flags.DEFINE_integer(
    'n_masks', None,
    'Number of patch masks per aggregate gradient.',
    allow_override=True)
flags.DEFINE_integer(
    'patch_size', None,
    'Side of the square patches that masks keep or drop.',
    allow_override=True)
flags.DEFINE_float(
    'keep_prob', None,
    'Probability that a mask keeps a patch.',
    allow_override=True)
flags.DEFINE_integer(
    'smooth_kernel', None,
    'Odd size of the Gaussian kernel smoothing aggregate gradients.',
    allow_override=True)
flags.DEFINE_float(
    'smooth_sigma', None,
    'Standard deviation of the aggregate gradient smoothing kernel.',
    allow_override=True)
flags.DEFINE_float(
    'ft_step', None,
    'Step size of fine-tuning.',
    allow_override=True)
flags.DEFINE_enum(
    'mode', None, [m.value for m in finetune.Mode],
    'Whether fine-tuning steps continue from the running average '
    '(algorithm1) or from the previous snapshot (trajectory).',
    allow_override=True)


FLAGS = flags.FLAGS

_METRICS_NAMESPACE = 'targeted_transfer'

# Flag name to config field name, per config section.
_EXPERIMENT_FLAGS = {name: name for name in [
    'global_seed', 'n_eval', 'n_attack', 'surrogates', 'victims', 'scenario',
    'schemes', 'quantize', 'train_missing']}
_DATASET_FLAGS = {
    'dataset_seed': 'seed',
    'dataset_n': 'n',
    'dataset_k': 'k',
    'dataset_side': 'side',
}
_ATTACK_FLAGS = {name: name for name in [
    'epsilon', 'step_size', 'iters', 'loss', 'mi_decay', 'ti_kernel',
    'ti_sigma', 'di_prob', 'di_max_ratio']}
_ATTACK_FLAGS['attack_seed'] = 'seed'
_FINETUNE_FLAGS = {name: name for name in [
    'n_ft', 'n_wu', 'gamma', 'beta', 'n_masks', 'patch_size', 'keep_prob',
    'smooth_kernel', 'smooth_sigma', 'ft_step', 'mode']}


def _fields_from_flags(flag_to_field):
  return {field: FLAGS[name].value for name, field in flag_to_field.items()
          if FLAGS[name].value is not None}


def load_experiment_config() -> harness.ExperimentConfig:
  """ExperimentConfig from --config with every set field flag applied."""
  if FLAGS.config:
    cfg = harness.load_config(FLAGS.config)
  else:
    cfg = harness.ExperimentConfig()
  cfg = dataclasses.replace(
      cfg,
      dataset=dataclasses.replace(
          cfg.dataset, **_fields_from_flags(_DATASET_FLAGS)),
      attack=dataclasses.replace(
          cfg.attack, **_fields_from_flags(_ATTACK_FLAGS)),
      finetune=dataclasses.replace(
          cfg.finetune, **_fields_from_flags(_FINETUNE_FLAGS)),
      **_fields_from_flags(_EXPERIMENT_FLAGS))
  return cfg.validate()


def load_split(cfg: harness.ExperimentConfig, split: data.Split,
               path: str = '') -> data.Dataset:
  """The HDF5 dataset at path, or the configured synthetic split."""
  if path:
    logging.info('Loading %s images from %s', split.value, path)
    return data.load_dataset(path)
  return harness.dataset_for(cfg, split)


def save_example(bundle: attacks.AEBundle, directory: str,
                 export_png: bool = False) -> str:
  path = attacks.save_bundle(bundle, directory)
  if export_png:
    with open(os.path.join(directory, bundle.stem + '.png'), 'wb') as f:
      f.write(data.export_png(bundle.tensor))
  return path


def craft_pipeline(runner, cfg, schemes, checkpoint_dir, output_dir,
                   dataset_path='', export_png=False):
  """Beam pipeline crafting and saving examples for every attack image.

  Args:
    runner: beam runner.
    cfg: experiment configuration.
    schemes: schemes to craft; configured schemes outside this list are
      skipped.
    checkpoint_dir: directory with the surrogate checkpoints.
    output_dir: directory to which AE bundles are written.
    dataset_path: optional HDF5 attack split.
    export_png: whether to write a PNG next to every bundle.

  Returns:
    Number of bundles the pipeline is expected to write.
  """
  schemes = [s for s in cfg.ordered_schemes if s in schemes]
  if not schemes:
    logging.warning('none of %s is configured, nothing to craft', schemes)
    return 0
  cfg = dataclasses.replace(cfg, schemes=schemes)
  zoo = harness.load_models(cfg, checkpoint_dir, cfg.surrogates)
  attack_data = load_split(cfg, data.Split.ATTACK, dataset_path)
  jobs = [(name, image_id) for name in cfg.surrogates
          for image_id in range(len(attack_data))]

  def craft(job, zoo=zoo, attack_data=attack_data, cfg=cfg):
    surrogate_name, image_id = job
    image, label = attack_data[image_id]
    return harness.craft_examples(surrogate_name, zoo[surrogate_name], image,
                                  label, image_id, cfg)

  def save(bundle, output_dir=output_dir, export_png=export_png):
    return save_example(bundle, output_dir, export_png)

  with beam.Pipeline(runner=runner) as pipeline:
    _ = (
        pipeline
        | 'create' >> beam.Create(jobs)
        | 'reshuffle' >> beam.Reshuffle()
        | 'craft' >> beam.FlatMap(count_start_finish(craft, name='craft'))
        | 'save' >> beam.Map(save)
    )
  return len(jobs) * len(schemes)


def get_counter_metric(name):
  return beam.metrics.Metrics.counter(_METRICS_NAMESPACE, name)


def count_start_finish(func, name=None):
  """Run a function with Beam metric counters for each start/finish."""
  if name is None:
    name = func.__name__

  def wrapper(*args, **kwargs):
    get_counter_metric('%s_started' % name).inc()
    get_counter_metric('%s_in_progress' % name).inc()
    results = func(*args, **kwargs)
    get_counter_metric('%s_in_progress' % name).dec()
    get_counter_metric('%s_finished' % name).inc()
    return results
  return wrapper
