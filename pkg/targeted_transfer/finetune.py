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
"""Feature-space fine-tuning of adversarial examples.

An adversarial example from the baseline attack is refined at the model's
feature tap. Class importance of each feature is estimated by an aggregate
gradient: the gradient of a class logit with respect to the tapped feature,
summed over randomly patch-masked copies of the input, L2-normalized and
spatially smoothed. The aggregate for the target class on the adversarial
example, minus beta times the aggregate for the original class on the clean
image, weights the feature map; the example then ascends that weighted sum
inside the epsilon ball.

Averaging along fine-tuning replaces the endpoint of this ascent by a
normalized, exponentially decayed average of the fine-tuning snapshots: with
gamma = 1 it is the plain mean of the snapshots, with gamma = 0 the last
snapshot.
"""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import dataclasses
import enum

from absl import logging
import numpy as np
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

# pylint: disable=g-bad-import-order
from targeted_transfer import layers
from targeted_transfer import models
from targeted_transfer import numerics


class DegenerateGradientError(ValueError):
  """Raised when an aggregate gradient sums to zero."""


@enum.unique
class Mode(enum.Enum):
  # each step continues from the previous raw snapshot
  TRAJECTORY = 'trajectory'
  # each step after the first continues from the running average
  ALGORITHM1 = 'algorithm1'


@enum.unique
class Source(enum.Enum):
  TARGET = 'target-on-AE'
  ORIGINAL = 'original-on-clean'
  COMBINED = 'combined'


@dataclasses.dataclass
class FinetuneConfig(object):
  """Hyperparameters of feature-space fine-tuning and trajectory averaging."""
  n_ft: int = 10
  n_wu: int = 5
  gamma: float = 0.8
  beta: float = 0.2
  n_masks: int = 30
  patch_size: int = 4
  keep_prob: float = 0.7
  smooth_kernel: int = 5
  smooth_sigma: float = 1.5
  ft_step: float = 2 / 255
  mode: str = 'algorithm1'

  def validate(self) -> 'FinetuneConfig':
    if self.n_ft < 1:
      raise ValueError('n_ft must be positive, got {}'.format(self.n_ft))
    if self.n_wu < 0:
      raise ValueError('n_wu must be non-negative, got {}'.format(self.n_wu))
    if not 0 <= self.gamma <= 1:
      raise ValueError('gamma must lie in [0, 1], got {}'.format(self.gamma))
    if not 0 < self.keep_prob <= 1:
      raise ValueError('keep_prob must lie in (0, 1], got {}'
                       .format(self.keep_prob))
    if self.n_masks < 1:
      raise ValueError('n_masks must be positive, got {}'.format(self.n_masks))
    if self.patch_size < 1:
      raise ValueError('patch_size must be positive, got {}'
                       .format(self.patch_size))
    numerics.gaussian_kernel(self.smooth_kernel, self.smooth_sigma)
    Mode(self.mode)
    return self

  @property
  def total_steps(self) -> int:
    return self.n_wu + self.n_ft

  def to_dict(self) -> Dict[str, Any]:
    return dataclasses.asdict(self)

  @classmethod
  def from_dict(cls, values: Dict[str, Any]) -> 'FinetuneConfig':
    return cls(**values).validate()


class AggregateGradient(NamedTuple):
  """Feature importance weights with the feature shape of the tap layer."""
  values: np.ndarray
  source: Source
  # normalized sum before smoothing
  unsmoothed: np.ndarray


def patch_mask(shape: Tuple[int, int], patch_size: int, keep_prob: float,
               random_state: np.random.RandomState,
               dtype: Any = np.float32) -> np.ndarray:
  """Random binary mask made of patch_size x patch_size blocks.

  Each block is kept (all ones) with probability keep_prob. Blocks at the
  right and bottom edges are cropped when patch_size does not divide the side.
  """
  height, width = shape
  grid = (-(-height // patch_size), -(-width // patch_size))
  keep = random_state.uniform(size=grid) < keep_prob
  mask = np.repeat(np.repeat(keep, patch_size, axis=0), patch_size, axis=1)
  return mask[:height, :width].astype(dtype)


def _smooth_feature(feature: np.ndarray, cfg: FinetuneConfig) -> np.ndarray:
  if feature.ndim < 3:
    return feature.copy()
  return numerics.gaussian_blur(feature, cfg.smooth_kernel, cfg.smooth_sigma)


def aggregate_gradient(model: models.TrainedModel,
                       image: np.ndarray,
                       label: int,
                       cfg: FinetuneConfig,
                       random_state: np.random.RandomState,
                       source: Source = Source.TARGET,
                       image_id: Optional[Any] = None) -> AggregateGradient:
  """Mask-ensembled gradient of a class logit with respect to the tap feature.

  All masked copies of the image go through the model as one batch.

  Args:
    model: surrogate model.
    image: image with shape [C, H, W] in [0, 1].
    label: class whose logit is differentiated.
    cfg: fine-tuning configuration.
    random_state: source of the patch masks.
    source: what the gradient describes, recorded on the result.
    image_id: identifier used in error messages.

  Returns:
    AggregateGradient whose pre-smoothing values have unit L2 norm.

  Raises:
    DegenerateGradientError: if the summed gradient is zero.
  """
  image = np.asarray(image)
  masks = np.stack([
      patch_mask(image.shape[-2:], cfg.patch_size, cfg.keep_prob,
                 random_state, image.dtype) for _ in range(cfg.n_masks)])
  batch = image[np.newaxis] * masks[:, np.newaxis]
  _, logits, tape = model.tap_forward(batch, record=True)
  seed = np.zeros_like(logits)
  seed[:, label] = 1
  grads = layers.backward(tape, seed, wrt=model.arch.tap_layer)
  total = grads.sum(axis=0)
  norm = np.linalg.norm(total)
  if norm == 0:
    raise DegenerateGradientError(
        'aggregate gradient of class {} is zero for image {}'
        .format(label, image_id))
  unsmoothed = total / norm
  return AggregateGradient(_smooth_feature(unsmoothed, cfg), Source(source),
                           unsmoothed)


def combine(target_ag: AggregateGradient, orig_ag: AggregateGradient,
            beta: float) -> AggregateGradient:
  """Target importance on the AE minus beta times original-class importance."""
  if target_ag.values.shape != orig_ag.values.shape:
    raise layers.ShapeError('aggregate gradient shapes differ: {} vs {}'
                            .format(target_ag.values.shape,
                                    orig_ag.values.shape))
  if beta == 0:
    return AggregateGradient(target_ag.values.copy(), Source.COMBINED,
                             target_ag.unsmoothed.copy())
  dtype = target_ag.values.dtype
  return AggregateGradient(
      (target_ag.values - beta * orig_ag.values).astype(dtype),
      Source.COMBINED,
      (target_ag.unsmoothed - beta * orig_ag.unsmoothed).astype(dtype))


def combined_guidance(model: models.TrainedModel,
                      baseline_ae: np.ndarray,
                      clean: np.ndarray,
                      y_o: int,
                      y_t: int,
                      cfg: FinetuneConfig,
                      random_state: np.random.RandomState,
                      image_id: Optional[Any] = None) -> AggregateGradient:
  """Combined aggregate gradient guiding fine-tuning of one example."""
  target_ag = aggregate_gradient(model, baseline_ae, y_t, cfg, random_state,
                                 Source.TARGET, image_id)
  orig_ag = aggregate_gradient(model, clean, y_o, cfg, random_state,
                               Source.ORIGINAL, image_id)
  return combine(target_ag, orig_ag, cfg.beta)


def feature_objective(
    model: models.TrainedModel,
    x: np.ndarray,
    weights: np.ndarray,
    reference: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
  """S = sum(weights * (f(x) - reference)) at the tap and its input gradient."""
  feature, _, tape = model.tap_forward(x[np.newaxis], record=True)
  shifted = feature[0] if reference is None else feature[0] - reference
  objective = float(np.sum(weights * shifted))
  grad = layers.backward(tape, weights[np.newaxis].astype(feature.dtype),
                         wrt=layers.INPUT, seed_at=model.arch.tap_layer)
  return objective, grad[0]


def _ascent_step(model: models.TrainedModel, x: np.ndarray, clean: np.ndarray,
                 weights: np.ndarray, step: float,
                 epsilon: float) -> np.ndarray:
  _, grad = feature_objective(model, x, weights)
  if not np.any(grad):
    return x
  return numerics.linf_project(x + step * np.sign(grad), clean, epsilon)


def fft_step(model: models.TrainedModel, x: np.ndarray, clean: np.ndarray,
             combined: AggregateGradient, step: float,
             epsilon: float) -> np.ndarray:
  """One sign-ascent step on the guidance-weighted tap feature."""
  return _ascent_step(model, x, clean, combined.values, step, epsilon)


def fft_run(model: models.TrainedModel, baseline_ae: np.ndarray,
            clean: np.ndarray, combined: AggregateGradient,
            cfg: FinetuneConfig, epsilon: float) -> np.ndarray:
  """Plain fine-tuning: the endpoint after n_wu + n_ft steps."""
  x = baseline_ae
  for _ in range(cfg.total_steps):
    x = fft_step(model, x, clean, combined, cfg.ft_step, epsilon)
  return x


class Trajectory(object):
  """Fine-tuning snapshots with a running decayed average.

  After appending s_0 ... s_{n-1}, the accumulator holds
  sum_i gamma**(n-1-i) * s_i and the weight sum sum_i gamma**(n-1-i).
  """

  def __init__(self, gamma: float):
    if not 0 <= gamma <= 1:
      raise ValueError('gamma must lie in [0, 1], got {}'.format(gamma))
    self.gamma = gamma
    self.snapshots = []  # type: List[np.ndarray]
    self.accumulator = None  # type: Optional[np.ndarray]
    self.weight_sum = 0.0

  def __len__(self) -> int:
    return len(self.snapshots)

  def append(self, snapshot: np.ndarray) -> None:
    snapshot = np.asarray(snapshot)
    if self.accumulator is None:
      self.accumulator = snapshot.astype(np.float64)
    else:
      if snapshot.shape != self.accumulator.shape:
        raise layers.ShapeError('snapshot shape {} does not match {}'
                                .format(snapshot.shape,
                                        self.accumulator.shape))
      self.accumulator = self.gamma * self.accumulator + snapshot
    self.weight_sum = self.gamma * self.weight_sum + 1
    self.snapshots.append(snapshot)

  def average(self) -> np.ndarray:
    if not self.snapshots:
      raise ValueError('cannot average an empty trajectory')
    dtype = self.snapshots[-1].dtype
    return (self.accumulator / self.weight_sum).astype(dtype)


def decayed_average(snapshots: Sequence[np.ndarray], gamma: float,
                    recursive: bool = False) -> np.ndarray:
  """Normalized decayed average; later snapshots weigh more for gamma < 1.

  Args:
    snapshots: nonempty sequence of arrays sharing one shape.
    gamma: decay factor in [0, 1].
    recursive: use the running-accumulator form instead of the closed form.

  Returns:
    sum_i gamma**(N-1-i) * s_i / sum_i gamma**(N-1-i), in the snapshots' dtype.
  """
  if not len(snapshots):  # pylint: disable=g-explicit-length-test
    raise ValueError('cannot average an empty sequence of snapshots')
  if recursive:
    trajectory = Trajectory(gamma)
    for snapshot in snapshots:
      trajectory.append(snapshot)
    return trajectory.average()
  dtype = np.asarray(snapshots[-1]).dtype
  stacked = np.stack([np.asarray(s, dtype=np.float64) for s in snapshots])
  weights = np.power(float(gamma), np.arange(len(snapshots) - 1, -1, -1))
  average = np.tensordot(weights, stacked, axes=1) / weights.sum()
  return average.astype(dtype)


def aaf_from_guidance(model: models.TrainedModel,
                      baseline_ae: np.ndarray,
                      clean: np.ndarray,
                      combined: AggregateGradient,
                      cfg: FinetuneConfig,
                      epsilon: float) -> Tuple[np.ndarray, Trajectory]:
  """Warm up, fine-tune n_ft more steps and average the snapshots."""
  step = cfg.ft_step
  x = baseline_ae
  for _ in range(cfg.n_wu):
    x = fft_step(model, x, clean, combined, step, epsilon)

  mode = Mode(cfg.mode)
  trajectory = Trajectory(cfg.gamma)
  for _ in range(cfg.n_ft):
    if mode is Mode.ALGORITHM1 and len(trajectory):
      start = trajectory.average()
    else:
      start = x
    x = fft_step(model, start, clean, combined, step, epsilon)
    trajectory.append(x)

  average = trajectory.average()
  result = numerics.linf_project(average, clean, epsilon)
  if not np.array_equal(result, average):
    logging.warning('projection changed the averaged example by up to %g',
                    np.max(np.abs(result - average)))
  return result, trajectory


def aaf_run(model: models.TrainedModel,
            baseline_ae: np.ndarray,
            clean: np.ndarray,
            y_o: int,
            y_t: int,
            cfg: FinetuneConfig,
            random_state: np.random.RandomState,
            epsilon: float,
            image_id: Optional[Any] = None) -> np.ndarray:
  """Averaging along fine-tuning for one baseline adversarial example.

  Args:
    model: surrogate model.
    baseline_ae: output of the baseline attack, inside the epsilon ball.
    clean: clean image.
    y_o: original class.
    y_t: target class.
    cfg: fine-tuning configuration.
    random_state: source of the patch masks.
    epsilon: L-infinity budget.
    image_id: identifier used in error messages.

  Returns:
    The averaged adversarial example.

  Raises:
    DegenerateGradientError: if an aggregate gradient is zero.
  """
  combined = combined_guidance(model, baseline_ae, clean, y_o, y_t, cfg,
                               random_state, image_id)
  result, _ = aaf_from_guidance(model, baseline_ae, clean, combined, cfg,
                                epsilon)
  return result


def ila_direction(model: models.TrainedModel, baseline_ae: np.ndarray,
                  clean: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
  """Feature displacement f(baseline_ae) - f(clean) and the clean feature."""
  ae_feature, _, _ = model.tap_forward(baseline_ae)
  clean_feature, _, _ = model.tap_forward(clean)
  return ae_feature - clean_feature, clean_feature


def ila_finetune(model: models.TrainedModel, baseline_ae: np.ndarray,
                 clean: np.ndarray, cfg: FinetuneConfig,
                 epsilon: float) -> np.ndarray:
  """Push the tap feature further along the baseline's feature displacement.

  Runs n_wu + n_ft sign-ascent steps on <d, f(x) - f(clean)> and returns the
  endpoint. A zero displacement returns baseline_ae unchanged.
  """
  direction, _ = ila_direction(model, baseline_ae, clean)
  if not np.any(direction):
    return baseline_ae
  x = baseline_ae
  for _ in range(cfg.total_steps):
    x = _ascent_step(model, x, clean, direction, cfg.ft_step, epsilon)
  return x
