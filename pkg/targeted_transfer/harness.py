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
"""Experiment configuration, the surrogate x victim matrix and reports."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import dataclasses
import enum
import io
import os

from absl import logging
import numpy as np
import pandas as pd
from typing import (Any, Dict, Iterator, List, NamedTuple, Optional, Sequence,
                    Tuple)

# pylint: disable=g-bad-import-order
from targeted_transfer import attacks
from targeted_transfer import data
from targeted_transfer import finetune as finetune_lib
from targeted_transfer import models
from targeted_transfer import numerics
from targeted_transfer import utils


CHECKPOINT_SUFFIX = '.aafm'
REPORT_COLUMNS = ['surrogate', 'victim', 'attack', 'scheme', 'epsilon',
                  'n_images', 'success_rate']
SWEEP_COLUMNS = ['surrogate', 'gamma', 'n_images', 'n_victims', 'success_rate']
DEFAULT_GAMMAS = tuple(i / 10 for i in range(11))


class ConfigurationError(ValueError):
  """Raised for inconsistent experiment settings or missing artifacts."""


@enum.unique
class Scheme(enum.Enum):
  NONE = 'none'
  ILA = 'ila'
  FFT = 'fft'
  AAF = 'aaf'


SCHEME_ORDER = [s.value for s in Scheme]


@dataclasses.dataclass
class ModelSpec(object):
  """A model in the zoo: architecture plus training settings."""
  name: str
  arch: str
  seed: int = 0
  epochs: int = 20
  learning_rate: float = 0.01
  batch_size: int = 64
  tap_layer: Optional[int] = None

  @property
  def checkpoint_name(self) -> str:
    return self.name + CHECKPOINT_SUFFIX

  def to_dict(self) -> Dict[str, Any]:
    return dataclasses.asdict(self)

  @classmethod
  def from_dict(cls, values: Dict[str, Any]) -> 'ModelSpec':
    return cls(**values)


def _default_models() -> List[ModelSpec]:
  return [ModelSpec('netA', 'netA', seed=1),
          ModelSpec('netB', 'netB', seed=2),
          ModelSpec('netC', 'netC', seed=3)]


@dataclasses.dataclass
class ExperimentConfig(object):
  """Everything that determines an experiment, serialized as one JSON file."""
  global_seed: int = 0
  dataset: data.DatasetSpec = dataclasses.field(
      default_factory=data.DatasetSpec)
  n_eval: int = 500
  n_attack: int = 200
  models: List[ModelSpec] = dataclasses.field(default_factory=_default_models)
  attack: attacks.AttackConfig = dataclasses.field(
      default_factory=attacks.AttackConfig)
  finetune: finetune_lib.FinetuneConfig = dataclasses.field(
      default_factory=finetune_lib.FinetuneConfig)
  surrogates: List[str] = dataclasses.field(default_factory=lambda: ['netA'])
  victims: List[str] = dataclasses.field(
      default_factory=lambda: ['netA', 'netB', 'netC'])
  scenario: str = 'random-target'
  schemes: List[str] = dataclasses.field(
      default_factory=lambda: list(SCHEME_ORDER))
  quantize: bool = False
  train_missing: bool = False

  def validate(self) -> 'ExperimentConfig':
    """Check cross-field consistency, raising ConfigurationError."""
    try:
      self.attack.validate()
      self.finetune.validate()
    except ValueError as e:
      raise ConfigurationError(str(e))
    names = [spec.name for spec in self.models]
    if len(set(names)) != len(names):
      raise ConfigurationError('duplicate model names: {}'.format(names))
    for spec in self.models:
      if spec.arch not in models.ARCHITECTURES:
        raise ConfigurationError('model {} has unknown architecture {!r}'
                                 .format(spec.name, spec.arch))
    for role, listed in [('surrogate', self.surrogates),
                         ('victim', self.victims)]:
      if not listed:
        raise ConfigurationError('no {}s configured'.format(role))
      for name in listed:
        if name not in names:
          raise ConfigurationError('{} {!r} is not one of the models {}'
                                   .format(role, name, names))
    if self.scenario not in [s.value for s in attacks.Scenario]:
      raise ConfigurationError('unknown scenario {!r}'.format(self.scenario))
    if not self.schemes:
      raise ConfigurationError('no schemes configured')
    for scheme in self.schemes:
      if scheme not in SCHEME_ORDER:
        raise ConfigurationError('unknown scheme {!r}, expected a subset of {}'
                                 .format(scheme, SCHEME_ORDER))
    if self.n_attack < 1 or self.n_eval < 1:
      raise ConfigurationError('n_attack and n_eval must be positive')
    return self

  @property
  def ordered_schemes(self) -> List[str]:
    return [s for s in SCHEME_ORDER if s in self.schemes]

  def model_spec(self, name: str) -> ModelSpec:
    for spec in self.models:
      if spec.name == name:
        return spec
    raise ConfigurationError('unknown model {!r}'.format(name))

  def split_spec(self, split: data.Split) -> data.DatasetSpec:
    count = {data.Split.TRAIN: self.dataset.n,
             data.Split.EVAL: self.n_eval,
             data.Split.ATTACK: self.n_attack}[split]
    return dataclasses.replace(self.dataset, n=count, split=split.value)

  def to_dict(self) -> Dict[str, Any]:
    return dataclasses.asdict(self)

  @classmethod
  def from_dict(cls, values: Dict[str, Any]) -> 'ExperimentConfig':
    values = dict(values)
    if 'dataset' in values:
      values['dataset'] = data.DatasetSpec.from_dict(values['dataset'])
    if 'models' in values:
      values['models'] = [ModelSpec.from_dict(m) for m in values['models']]
    if 'attack' in values:
      values['attack'] = attacks.AttackConfig(**values['attack'])
    if 'finetune' in values:
      values['finetune'] = finetune_lib.FinetuneConfig(**values['finetune'])
    unknown = set(values) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
      raise ConfigurationError('unknown config fields: {}'
                               .format(sorted(unknown)))
    return cls(**values).validate()


def load_config(path: str) -> ExperimentConfig:
  return ExperimentConfig.from_dict(utils.read_json(path))


def save_config(cfg: ExperimentConfig, path: str) -> None:
  utils.write_json(cfg.to_dict(), path)


def dataset_for(cfg: ExperimentConfig, split: data.Split) -> data.Dataset:
  return data.synth_dataset_from_spec(cfg.split_spec(split))


def checkpoint_path(checkpoint_dir: str, spec: ModelSpec) -> str:
  return os.path.join(checkpoint_dir, spec.checkpoint_name)


def build_arch(spec: ModelSpec, dataset: data.Dataset) -> models.ModelArch:
  return models.get_arch(spec.arch, dataset.num_classes, dataset.image_shape,
                         spec.tap_layer)


def train_model(
    spec: ModelSpec,
    train_data: data.Dataset,
    eval_data: Optional[data.Dataset] = None,
) -> Tuple[models.TrainedModel, pd.DataFrame]:
  arch = build_arch(spec, train_data)
  model, metrics = models.training_loop(
      arch, train_data, spec.epochs, spec.learning_rate, spec.seed,
      batch_size=spec.batch_size, eval_dataset=eval_data)
  return model, metrics


def load_models(cfg: ExperimentConfig,
                checkpoint_dir: str,
                names: Optional[Sequence[str]] = None,
                ) -> Dict[str, models.TrainedModel]:
  """Load checkpoints for the named models, training missing ones if allowed.

  Raises:
    ConfigurationError: if a checkpoint is missing and training is disabled.
  """
  if names is None:
    names = [spec.name for spec in cfg.models]
  zoo = {}
  train_data = None
  for name in names:
    spec = cfg.model_spec(name)
    path = checkpoint_path(checkpoint_dir, spec)
    if os.path.exists(path):
      logging.info('Loading %s from %s', name, path)
      zoo[name] = models.load_checkpoint(path)
      continue
    if not cfg.train_missing:
      raise ConfigurationError('missing checkpoint for model {!r}: {}'
                               .format(name, path))
    if train_data is None:
      train_data = dataset_for(cfg, data.Split.TRAIN)
    logging.info('No checkpoint at %s, training %s', path, name)
    zoo[name], _ = train_model(spec, train_data)
    models.save_checkpoint(zoo[name], path)
  return zoo


def success_rate(victim: models.TrainedModel,
                 bundles: Sequence[attacks.AEBundle],
                 quantize: bool = False) -> float:
  """Fraction of adversarial examples the victim classifies as their target."""
  if not bundles:
    raise ValueError('cannot compute a success rate without examples')
  hits = 0
  for bundle in bundles:
    image = numerics.quantize(bundle.tensor) if quantize else bundle.tensor
    _, predicted = models.predict(victim, image)
    hits += predicted == bundle.y_t
  return hits / len(bundles)


def expected_hash(cfg: ExperimentConfig, scheme: str) -> str:
  if scheme == Scheme.NONE.value:
    return attacks.config_hash(cfg.attack)
  return attacks.config_hash(cfg.attack, cfg.finetune)


def _image_random_state(cfg: ExperimentConfig, image_id: int,
                        purpose: str) -> np.random.RandomState:
  return np.random.RandomState(
      utils.derive_seed(cfg.global_seed, image_id, purpose))


class BaselineResult(NamedTuple):
  y_t: int
  refined_start: Optional[np.ndarray]  # baseline AE that fine-tuning refines
  plain: Optional[np.ndarray]  # baseline AE reported as scheme none


def run_baselines(surrogate: models.TrainedModel, clean: np.ndarray, y_o: int,
                  image_id: int, cfg: ExperimentConfig,
                  need_plain: bool = True,
                  need_refined: bool = True) -> BaselineResult:
  """Baseline adversarial examples for one image.

  The shorter run is resumed to produce the longer one, so both share a prefix
  of the same random stream.
  """
  y_t = attacks.choose_target(surrogate, clean, y_o, cfg.scenario,
                              _image_random_state(cfg, image_id, 'target'))
  random_state = _image_random_state(cfg, image_id, 'attack')
  instance = attacks.AttackInstance.start(clean, y_o, y_t)
  refined_iters = cfg.attack.num_iters(finetune=True)
  plain_iters = cfg.attack.num_iters(finetune=False)

  refined = plain = None
  if need_refined:
    instance = attacks.run_baseline(surrogate, instance, cfg.attack,
                                    refined_iters, random_state)
    refined = instance.current
  if need_plain:
    if not need_refined:
      plain = attacks.run_baseline(surrogate, instance, cfg.attack,
                                   plain_iters, random_state).current
    elif plain_iters >= refined_iters:
      plain = attacks.run_baseline(surrogate, instance, cfg.attack,
                                   plain_iters - refined_iters,
                                   random_state).current
    else:
      fresh = attacks.AttackInstance.start(clean, y_o, y_t)
      plain = attacks.run_baseline(
          surrogate, fresh, cfg.attack, plain_iters,
          _image_random_state(cfg, image_id, 'attack')).current
  return BaselineResult(y_t, refined, plain)


def guidance_for(surrogate: models.TrainedModel, baseline_ae: np.ndarray,
                 clean: np.ndarray, y_o: int, y_t: int, image_id: int,
                 cfg: ExperimentConfig,
                 ) -> Optional[finetune_lib.AggregateGradient]:
  """Combined aggregate gradient, or None if it is degenerate."""
  try:
    return finetune_lib.combined_guidance(
        surrogate, baseline_ae, clean, y_o, y_t, cfg.finetune,
        _image_random_state(cfg, image_id, 'finetune'), image_id)
  except finetune_lib.DegenerateGradientError as e:
    logging.warning('%s; keeping the baseline example', e)
    return None


def craft_examples(surrogate_name: str,
                   surrogate: models.TrainedModel,
                   clean: np.ndarray,
                   y_o: int,
                   image_id: int,
                   cfg: ExperimentConfig) -> List[attacks.AEBundle]:
  """Adversarial examples for one image, one per configured scheme.

  Random streams are derived from (global_seed, image_id), so the result does
  not depend on the order in which images are processed.
  """
  schemes = cfg.ordered_schemes
  refined_schemes = [s for s in schemes if s != Scheme.NONE.value]
  baselines = run_baselines(surrogate, clean, y_o, image_id, cfg,
                            need_plain=Scheme.NONE.value in schemes,
                            need_refined=bool(refined_schemes))
  y_t = baselines.y_t
  epsilon = cfg.attack.epsilon
  start = baselines.refined_start

  examples = {}
  if Scheme.NONE.value in schemes:
    examples[Scheme.NONE.value] = baselines.plain
  if Scheme.ILA.value in schemes:
    examples[Scheme.ILA.value] = finetune_lib.ila_finetune(
        surrogate, start, clean, cfg.finetune, epsilon)
  if Scheme.FFT.value in schemes or Scheme.AAF.value in schemes:
    guidance = guidance_for(surrogate, start, clean, y_o, y_t, image_id, cfg)
    if Scheme.FFT.value in schemes:
      examples[Scheme.FFT.value] = start if guidance is None else (
          finetune_lib.fft_run(surrogate, start, clean, guidance,
                               cfg.finetune, epsilon))
    if Scheme.AAF.value in schemes:
      examples[Scheme.AAF.value] = start if guidance is None else (
          finetune_lib.aaf_from_guidance(surrogate, start, clean, guidance,
                                         cfg.finetune, epsilon)[0])

  return [attacks.AEBundle(image_id, y_o, y_t, cfg.attack.loss, scheme,
                           surrogate_name, expected_hash(cfg, scheme),
                           examples[scheme])
          for scheme in schemes]


def craft_all(surrogate_name: str, surrogate: models.TrainedModel,
              dataset: data.Dataset,
              cfg: ExperimentConfig) -> Iterator[attacks.AEBundle]:
  for image_id, (image, label) in enumerate(dataset):
    for bundle in craft_examples(surrogate_name, surrogate, image, label,
                                 image_id, cfg):
      yield bundle
    logging.log_every_n(logging.INFO, 'Crafted examples for %d images', 20,
                        image_id + 1)


def evaluate_bundles(zoo: Dict[str, models.TrainedModel],
                     bundles: Sequence[attacks.AEBundle],
                     cfg: ExperimentConfig) -> pd.DataFrame:
  """Success rate of every (surrogate, scheme) group against every victim.

  Raises:
    ConfigurationError: if a bundle was made with different settings, or a
      configured (surrogate, scheme) group has no examples.
  """
  groups = {}  # type: Dict[Tuple[str, str], List[attacks.AEBundle]]
  for bundle in bundles:
    if bundle.cfg_hash != expected_hash(cfg, bundle.scheme):
      raise ConfigurationError(
          'example {} has config hash {}, expected {}'.format(
              bundle.stem, bundle.cfg_hash, expected_hash(cfg, bundle.scheme)))
    groups.setdefault((bundle.surrogate, bundle.scheme), []).append(bundle)

  rows = []
  for surrogate_name in cfg.surrogates:
    for victim_name in cfg.victims:
      for scheme in cfg.ordered_schemes:
        group = sorted(groups.get((surrogate_name, scheme), []),
                       key=lambda b: b.image_id)
        if not group:
          raise ConfigurationError('no {} examples for surrogate {}'
                                   .format(scheme, surrogate_name))
        rate = success_rate(zoo[victim_name], group, cfg.quantize)
        logging.info('%s -> %s [%s]: success rate %.4f', surrogate_name,
                     victim_name, scheme, rate)
        rows.append({'surrogate': surrogate_name,
                     'victim': victim_name,
                     'attack': cfg.attack.loss,
                     'scheme': scheme,
                     'epsilon': cfg.attack.epsilon,
                     'n_images': len(group),
                     'success_rate': rate})
  return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def log_disagreement(zoo: Dict[str, models.TrainedModel],
                     cfg: ExperimentConfig,
                     images: np.ndarray) -> Dict[Tuple[str, str], float]:
  """Log and return how often each surrogate and victim disagree on images."""
  rates = {}
  for surrogate_name in cfg.surrogates:
    for victim_name in cfg.victims:
      if victim_name != surrogate_name:
        rate = models.disagreement([zoo[surrogate_name], zoo[victim_name]],
                                   images)
        logging.info('%s and %s disagree on %.1f%% of %d clean images',
                     surrogate_name, victim_name, 100 * rate, len(images))
        rates[surrogate_name, victim_name] = rate
  return rates


def run_matrix(cfg: ExperimentConfig,
               checkpoint_dir: str,
               bundle_dir: Optional[str] = None,
               zoo: Optional[Dict[str, models.TrainedModel]] = None,
               attack_data: Optional[data.Dataset] = None,
               eval_data: Optional[data.Dataset] = None,
               ) -> pd.DataFrame:
  """Craft examples on every surrogate and evaluate them on every victim.

  Args:
    cfg: experiment configuration.
    checkpoint_dir: directory holding <model name>.aafm checkpoints.
    bundle_dir: if given, every adversarial example is saved here.
    zoo: preloaded models by name; loaded from checkpoint_dir otherwise.
    attack_data: images to attack; the synthetic attack split by default.
    eval_data: clean images on which model disagreement is logged; the
      synthetic eval split by default.

  Returns:
    Report DataFrame with REPORT_COLUMNS.
  """
  cfg.validate()
  if zoo is None:
    zoo = load_models(cfg, checkpoint_dir,
                      sorted(set(cfg.surrogates) | set(cfg.victims)))
  if eval_data is None:
    eval_data = dataset_for(cfg, data.Split.EVAL)
  log_disagreement(zoo, cfg, eval_data.images)
  if attack_data is None:
    attack_data = dataset_for(cfg, data.Split.ATTACK)
  bundles = []
  for surrogate_name in cfg.surrogates:
    for bundle in craft_all(surrogate_name, zoo[surrogate_name], attack_data,
                            cfg):
      if bundle_dir:
        attacks.save_bundle(bundle, bundle_dir)
      bundles.append(bundle)
  return evaluate_bundles(zoo, bundles, cfg)


def held_out_victims(cfg: ExperimentConfig, surrogate_name: str) -> List[str]:
  victims = [v for v in cfg.victims if v != surrogate_name]
  if not victims:
    logging.warning('no held-out victims for surrogate %s', surrogate_name)
  return victims


def sweep_examples(surrogate: models.TrainedModel, clean: np.ndarray,
                   y_o: int, image_id: int, cfg: ExperimentConfig,
                   gammas: Sequence[float]) -> Tuple[int, List[np.ndarray]]:
  """Averaged examples of one image for each gamma, sharing one guidance."""
  baselines = run_baselines(surrogate, clean, y_o, image_id, cfg,
                            need_plain=False)
  start = baselines.refined_start
  guidance = guidance_for(surrogate, start, clean, y_o, baselines.y_t,
                          image_id, cfg)
  results = []
  for gamma in gammas:
    if guidance is None:
      results.append(start)
      continue
    ft_cfg = dataclasses.replace(cfg.finetune, gamma=gamma)
    ae, _ = finetune_lib.aaf_from_guidance(surrogate, start, clean,
                                           guidance, ft_cfg,
                                           cfg.attack.epsilon)
    results.append(ae)
  return baselines.y_t, results


class PlaneAnchors(NamedTuple):
  y_t: int
  ae: np.ndarray
  ae_fft: np.ndarray
  ae_aaf: np.ndarray


def plane_anchors(surrogate: models.TrainedModel, clean: np.ndarray, y_o: int,
                  image_id: int, cfg: ExperimentConfig) -> PlaneAnchors:
  """The refined baseline and its fine-tuned and averaged examples."""
  baselines = run_baselines(surrogate, clean, y_o, image_id, cfg,
                            need_plain=False)
  start = baselines.refined_start
  guidance = guidance_for(surrogate, start, clean, y_o, baselines.y_t,
                          image_id, cfg)
  if guidance is None:
    return PlaneAnchors(baselines.y_t, start, start, start)
  epsilon = cfg.attack.epsilon
  ae_fft = finetune_lib.fft_run(surrogate, start, clean, guidance,
                                cfg.finetune, epsilon)
  ae_aaf, _ = finetune_lib.aaf_from_guidance(surrogate, start, clean,
                                             guidance, cfg.finetune, epsilon)
  return PlaneAnchors(baselines.y_t, start, ae_fft, ae_aaf)


def gamma_sweep(cfg: ExperimentConfig,
                checkpoint_dir: str,
                gammas: Sequence[float] = DEFAULT_GAMMAS,
                zoo: Optional[Dict[str, models.TrainedModel]] = None,
                attack_data: Optional[data.Dataset] = None,
                ) -> pd.DataFrame:
  """Mean held-out success rate of averaged examples for each gamma.

  Attack images default to the synthetic attack split.

  Returns:
    DataFrame with SWEEP_COLUMNS and one row per (surrogate, gamma).
  """
  cfg.validate()
  for gamma in gammas:
    if not 0 <= gamma <= 1:
      raise ConfigurationError('gamma must lie in [0, 1], got {}'
                               .format(gamma))
  if zoo is None:
    zoo = load_models(cfg, checkpoint_dir,
                      sorted(set(cfg.surrogates) | set(cfg.victims)))
  if attack_data is None:
    attack_data = dataset_for(cfg, data.Split.ATTACK)
  rows = []
  for surrogate_name in cfg.surrogates:
    surrogate = zoo[surrogate_name]
    per_gamma = [[] for _ in gammas]  # type: List[List[attacks.AEBundle]]
    for image_id, (image, label) in enumerate(attack_data):
      y_t, examples = sweep_examples(surrogate, image, label, image_id, cfg,
                                     gammas)
      for bundles, ae in zip(per_gamma, examples):
        bundles.append(attacks.AEBundle(
            image_id, label, y_t, cfg.attack.loss, Scheme.AAF.value,
            surrogate_name, expected_hash(cfg, Scheme.AAF.value), ae))
    victims = held_out_victims(cfg, surrogate_name)
    for gamma, bundles in zip(gammas, per_gamma):
      rates = [success_rate(zoo[v], bundles, cfg.quantize) for v in victims]
      mean = float(np.mean(rates)) if rates else float('nan')
      logging.info('%s gamma=%.2f: mean held-out success rate %.4f',
                   surrogate_name, gamma, mean)
      rows.append({'surrogate': surrogate_name, 'gamma': float(gamma),
                   'n_images': len(bundles), 'n_victims': len(victims),
                   'success_rate': mean})
  return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def validate_report(report: pd.DataFrame) -> pd.DataFrame:
  if report.empty:
    raise ValueError('report has no rows')
  if list(report.columns) != REPORT_COLUMNS:
    raise ValueError('report columns {} differ from {}'
                     .format(list(report.columns), REPORT_COLUMNS))
  if not report['success_rate'].between(0, 1).all():
    raise ValueError('success rates must lie in [0, 1]')
  if not (report['n_images'] > 0).all():
    raise ValueError('every report row needs at least one image')
  return report


def emit_report(report: pd.DataFrame, fmt: str = 'csv') -> bytes:
  """Render a report as CSV or as markdown tables grouped by surrogate."""
  validate_report(report)
  if fmt == 'csv':
    table = report.copy()
    table['success_rate'] = table['success_rate'].map('{:.4f}'.format)
    buffer = io.StringIO()
    table.to_csv(buffer, index=False)
    return buffer.getvalue().encode('utf-8')
  if fmt == 'markdown':
    return _markdown_report(report).encode('utf-8')
  raise ValueError('unknown report format {!r}'.format(fmt))


def _markdown_report(report: pd.DataFrame) -> str:
  schemes = [s for s in SCHEME_ORDER if s in set(report['scheme'])]
  lines = ['# Targeted transfer success rate (%)', '',
           'Cells list {} for each victim.'.format('/'.join(schemes)), '']
  for surrogate_name in pd.unique(report['surrogate']):
    rows = report[report['surrogate'] == surrogate_name]
    victims = list(pd.unique(rows['victim']))
    header = ['Attack'] + [
        v + ' (white-box)' if v == surrogate_name else v for v in victims]
    lines.append('## Surrogate: {}'.format(surrogate_name))
    lines.append('')
    lines.append('| ' + ' | '.join(header) + ' |')
    lines.append('|' + '---|' * len(header))
    for attack in pd.unique(rows['attack']):
      cells = [attack]
      for victim in victims:
        selected = rows[(rows['attack'] == attack) & (rows['victim'] == victim)]
        rates = dict(zip(selected['scheme'], selected['success_rate']))
        cells.append('/'.join(
            '{:.1f}'.format(100 * rates[s]) if s in rates else '-'
            for s in schemes))
      lines.append('| ' + ' | '.join(cells) + ' |')
    lines.append('')
  return '\n'.join(lines)


def parse_report(blob: bytes) -> pd.DataFrame:
  """Read a CSV report produced by emit_report()."""
  report = pd.read_csv(io.BytesIO(blob),
                       dtype={'surrogate': str, 'victim': str, 'attack': str,
                              'scheme': str, 'n_images': np.int64})
  return validate_report(report)


def save_report(report: pd.DataFrame, output_dir: str,
                basename: str = 'report') -> Dict[str, str]:
  """Write <basename>.csv and <basename>.md, returning their paths."""
  utils.makedirs(output_dir)
  paths = {}
  for fmt, suffix in [('csv', '.csv'), ('markdown', '.md')]:
    path = os.path.join(output_dir, basename + suffix)
    with open(path, 'wb') as f:
      f.write(emit_report(report, fmt))
    paths[fmt] = path
  return paths
