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
"""Targeted iterative attacks with momentum, input diversity and smoothing."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import dataclasses
import enum
import glob
import os
import struct

from absl import logging
import numpy as np
import scipy.special
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

# pylint: disable=g-bad-import-order
from targeted_transfer import data
from targeted_transfer import layers
from targeted_transfer import models
from targeted_transfer import numerics
from targeted_transfer import utils


# Iteration counts when iters is left unset.
ITERS_WITH_FINETUNE = 160
ITERS_WITHOUT_FINETUNE = 200


@enum.unique
class LossKind(enum.Enum):
  CE = 'ce'
  LOGIT = 'logit'
  MARGIN = 'margin'


@enum.unique
class Scenario(enum.Enum):
  RANDOM_TARGET = 'random-target'
  MOST_DIFFICULT = 'most-difficult'


@dataclasses.dataclass
class AttackConfig(object):
  """Hyperparameters of the baseline attack. Pixels live in [0, 1]."""
  epsilon: float = 16 / 255
  step_size: float = 2 / 255
  iters: Optional[int] = None
  loss: str = 'ce'
  mi_decay: float = 1.0
  ti_kernel: int = 5
  ti_sigma: float = 1.5
  di_prob: float = 0.7
  di_max_ratio: float = 1.1
  seed: int = 0

  def validate(self) -> 'AttackConfig':
    if not 0 < self.epsilon <= 1:
      raise ValueError(
          'epsilon must lie in (0, 1], got {}'.format(self.epsilon))
    if not 0 < self.step_size <= 1:
      raise ValueError('step_size must lie in (0, 1], got {}'
                       .format(self.step_size))
    if self.iters is not None and self.iters < 0:
      raise ValueError('iters must be non-negative, got {}'.format(self.iters))
    if not 0 <= self.di_prob <= 1:
      raise ValueError(
          'di_prob must lie in [0, 1], got {}'.format(self.di_prob))
    if self.di_max_ratio < 1:
      raise ValueError('di_max_ratio must be at least 1, got {}'
                       .format(self.di_max_ratio))
    if self.mi_decay < 0:
      raise ValueError('mi_decay must be non-negative, got {}'
                       .format(self.mi_decay))
    # raises for an even or non-positive kernel, or sigma <= 0
    numerics.gaussian_kernel(self.ti_kernel, self.ti_sigma)
    LossKind(self.loss)
    return self

  @property
  def loss_kind(self) -> LossKind:
    return LossKind(self.loss)

  def num_iters(self, finetune: bool) -> int:
    """Iterations of the baseline attack, depending on whether it is refined."""
    if self.iters is not None:
      return self.iters
    return ITERS_WITH_FINETUNE if finetune else ITERS_WITHOUT_FINETUNE

  def to_dict(self) -> Dict[str, Any]:
    return dataclasses.asdict(self)

  @classmethod
  def from_dict(cls, values: Dict[str, Any]) -> 'AttackConfig':
    return cls(**values).validate()


class AttackInstance(NamedTuple):
  """State of one targeted attack; all tensors have the image shape."""
  clean: np.ndarray
  y_o: int
  y_t: int
  current: np.ndarray
  momentum: np.ndarray

  @classmethod
  def start(cls, clean: np.ndarray, y_o: int, y_t: int) -> 'AttackInstance':
    if y_o == y_t:
      raise ValueError('target class must differ from the original class {}'
                       .format(y_o))
    clean = np.asarray(clean)
    return cls(clean, int(y_o), int(y_t), clean.copy(), np.zeros_like(clean))


def targeted_loss_and_grad(logits: np.ndarray, y_t: int,
                           kind: LossKind) -> Tuple[float, np.ndarray]:
  """Targeted loss to minimize and its gradient with respect to the logits.

  Args:
    logits: array with shape [num_classes].
    y_t: target class.
    kind: ce (cross-entropy of the softmax), logit (negated target logit) or
      margin (negated gap between the target and the best other logit).

  Returns:
    Tuple (loss, gradient) where gradient has the shape and dtype of logits.
  """
  logits = np.asarray(logits)
  kind = LossKind(kind)
  num_classes = logits.shape[-1]
  if not 0 <= y_t < num_classes:
    raise ValueError('target class {} out of range for {} classes'
                     .format(y_t, num_classes))
  grad = np.zeros_like(logits)
  if kind is LossKind.CE:
    loss = scipy.special.logsumexp(logits) - logits[y_t]
    grad[...] = scipy.special.softmax(logits)
    grad[y_t] -= 1
  elif kind is LossKind.LOGIT:
    loss = -logits[y_t]
    grad[y_t] = -1
  else:
    others = np.delete(np.arange(num_classes), y_t)
    best = int(others[np.argmax(logits[others])])
    loss = -(logits[y_t] - logits[best])
    grad[y_t] = -1
    grad[best] = 1
  return float(loss), grad


def targeted_loss(logits: np.ndarray, y_t: int, kind: LossKind) -> float:
  loss, _ = targeted_loss_and_grad(logits, y_t, kind)
  return loss


class DiversityTransform(object):
  """A fixed random resize-and-pad, as separable row and column selections.

  Each output pixel either copies one input pixel (nearest-neighbor) or is a
  zero from the padding, so the transform is linear with 0/1 weights and its
  backward pass is the transpose.
  """

  def __init__(self, rows: Optional[np.ndarray], cols: Optional[np.ndarray]):
    # None means identity.
    self.rows = rows
    self.cols = cols

  @property
  def is_identity(self) -> bool:
    return self.rows is None

  @classmethod
  def identity(cls) -> 'DiversityTransform':
    return cls(None, None)

  @classmethod
  def sample(cls, image_shape: Tuple[int, ...], prob: float, max_ratio: float,
             random_state: np.random.RandomState) -> 'DiversityTransform':
    """Draw a transform; identity transforms consume no random numbers."""
    height, width = image_shape[-2:]
    if height != width:
      raise layers.ShapeError('input diversity needs square images, got {}'
                              .format(image_shape))
    side = height
    padded = int(side * max_ratio)
    if prob <= 0 or padded <= side:
      return cls.identity()
    if random_state.uniform() >= prob:
      return cls.identity()
    resized = random_state.randint(side, padded)
    pad_top = random_state.randint(0, padded - resized + 1)
    pad_left = random_state.randint(0, padded - resized + 1)
    return cls(_selection(side, resized, padded, pad_top),
               _selection(side, resized, padded, pad_left))

  def apply(self, image: np.ndarray) -> np.ndarray:
    if self.is_identity:
      return image
    rows = self.rows.astype(image.dtype)
    cols = self.cols.astype(image.dtype)
    return np.einsum('ij,...jk,lk->...il', rows, image, cols)

  def backprop(self, grad: np.ndarray) -> np.ndarray:
    if self.is_identity:
      return grad
    rows = self.rows.astype(grad.dtype)
    cols = self.cols.astype(grad.dtype)
    return np.einsum('ij,...il,lk->...jk', rows, grad, cols)


def _selection(side: int, resized: int, padded: int, offset: int) -> np.ndarray:
  """0/1 matrix mapping one input axis to the transformed output axis."""
  matrix = np.zeros((side, side), dtype=np.float64)
  padded_index = (np.arange(side) * padded) // side
  inside = (padded_index >= offset) & (padded_index < offset + resized)
  source = ((padded_index - offset) * side) // resized
  matrix[np.arange(side)[inside], source[inside]] = 1
  return matrix


def di_transform(image: np.ndarray, prob: float, max_ratio: float,
                 random_state: np.random.RandomState) -> np.ndarray:
  transform = DiversityTransform.sample(image.shape, prob, max_ratio,
                                        random_state)
  return transform.apply(image)


def ti_smooth(grad: np.ndarray, kernel: int, sigma: float) -> np.ndarray:
  """Translation-invariant smoothing of an input gradient, per channel."""
  return numerics.gaussian_blur(grad, kernel, sigma)


def mi_step(instance: AttackInstance, grad: np.ndarray, mu: float,
            step: float, epsilon: float) -> AttackInstance:
  """One momentum sign-descent step followed by projection.

  A gradient with zero L1 norm leaves the instance unchanged.
  """
  grad = np.asarray(grad)
  if grad.shape != instance.current.shape:
    raise layers.ShapeError('gradient shape {} does not match image shape {}'
                            .format(grad.shape, instance.current.shape))
  norm = np.sum(np.abs(grad))
  if norm == 0:
    return instance
  momentum = (mu * instance.momentum + grad / norm).astype(
      instance.momentum.dtype)
  current = numerics.linf_project(
      instance.current - step * np.sign(momentum), instance.clean, epsilon)
  return instance._replace(current=current, momentum=momentum)


def input_gradient(model: models.TrainedModel, image: np.ndarray, y_t: int,
                   kind: LossKind) -> Tuple[float, np.ndarray]:
  """Targeted loss at a single image and its gradient with respect to it."""
  logits, tape = layers.forward(model.arch.layers, model.params,
                                image[np.newaxis], record=True)
  loss, grad_logits = targeted_loss_and_grad(logits[0], y_t, kind)
  grad = layers.backward(tape, grad_logits[np.newaxis])
  return loss, grad[0]


def run_baseline(model: models.TrainedModel,
                 instance: AttackInstance,
                 cfg: AttackConfig,
                 iters: Optional[int] = None,
                 random_state: Optional[np.random.RandomState] = None,
                 ) -> AttackInstance:
  """Run the iterative targeted attack from the instance's current state.

  Each iteration applies the diversity transform, takes the gradient of the
  targeted loss, smooths it and makes a momentum step.

  Args:
    model: surrogate model.
    instance: fresh or partially attacked instance.
    cfg: attack configuration.
    iters: number of iterations; defaults to cfg.num_iters(finetune=False).
    random_state: source of diversity transforms; defaults to one seeded with
      cfg.seed. Passing the same object to consecutive calls continues the
      same random stream, so runs can be resumed.

  Returns:
    Updated instance.
  """
  if iters is None:
    iters = cfg.num_iters(finetune=False)
  if random_state is None:
    random_state = np.random.RandomState(cfg.seed)
  kind = cfg.loss_kind
  for _ in range(iters):
    transform = DiversityTransform.sample(
        instance.current.shape, cfg.di_prob, cfg.di_max_ratio, random_state)
    _, grad = input_gradient(model, transform.apply(instance.current),
                             instance.y_t, kind)
    grad = ti_smooth(transform.backprop(grad), cfg.ti_kernel, cfg.ti_sigma)
    instance = mi_step(instance, grad, cfg.mi_decay, cfg.step_size,
                       cfg.epsilon)
  return instance


def choose_target(model: models.TrainedModel, clean: np.ndarray, y_o: int,
                  scenario: Scenario,
                  random_state: np.random.RandomState) -> int:
  """Pick the target class for one image.

  random-target draws a uniformly random class other than y_o; most-difficult
  takes the class the model scores lowest on the clean image.
  """
  scenario = Scenario(scenario)
  num_classes = model.num_classes
  if scenario is Scenario.RANDOM_TARGET:
    draw = int(random_state.randint(num_classes - 1))
    return draw + (draw >= y_o)
  logits, _ = models.predict(model, clean)
  logits = np.array(logits, dtype=np.float64)
  logits[y_o] = np.inf
  return int(np.argmin(logits))


def encode_tensor(array: np.ndarray) -> bytes:
  """u32 rank, u32 dimensions, then little-endian float32 data."""
  array = np.asarray(array)
  header = struct.pack('<I{}I'.format(array.ndim), array.ndim, *array.shape)
  return header + np.ascontiguousarray(array, dtype='<f4').tobytes()


def decode_tensor(blob: bytes) -> np.ndarray:
  if len(blob) < 4:
    raise data.FormatError('tensor truncated at byte offset {}'
                           .format(len(blob)))
  rank, = struct.unpack('<I', blob[:4])
  offset = 4 + 4 * rank
  if len(blob) < offset:
    raise data.FormatError('tensor truncated at byte offset {}'
                           .format(len(blob)))
  shape = struct.unpack('<{}I'.format(rank), blob[4:offset])
  expected = offset + 4 * int(np.prod(shape))
  if len(blob) != expected:
    raise data.FormatError('tensor of shape {} needs {} bytes, got {}'
                           .format(shape, expected, len(blob)))
  return np.frombuffer(blob[offset:], dtype='<f4').reshape(shape).astype(
      np.float32)


def config_hash(*configs: Any) -> str:
  """Hash identifying the configs an adversarial example was made with."""
  return utils.stable_hash([c.to_dict() for c in configs if c is not None])


class AEBundle(NamedTuple):
  """An adversarial example with the labels and settings that produced it."""
  image_id: int
  y_o: int
  y_t: int
  attack: str
  scheme: str
  surrogate: str
  cfg_hash: str
  tensor: np.ndarray

  @property
  def stem(self) -> str:
    return '{}_{}_{:06d}'.format(self.surrogate, self.scheme, self.image_id)

  def manifest(self) -> Dict[str, Any]:
    return {
        'image_id': self.image_id,
        'y_o': self.y_o,
        'y_t': self.y_t,
        'attack': self.attack,
        'scheme': self.scheme,
        'surrogate': self.surrogate,
        'cfg_hash': self.cfg_hash,
    }


def save_bundle(bundle: AEBundle, directory: str) -> str:
  """Write <stem>.json and <stem>.tensor, returning the manifest path."""
  utils.makedirs(directory)
  manifest_path = os.path.join(directory, bundle.stem + '.json')
  with open(os.path.join(directory, bundle.stem + '.tensor'), 'wb') as f:
    f.write(encode_tensor(bundle.tensor))
  utils.write_json(bundle.manifest(), manifest_path)
  return manifest_path


def load_bundle(manifest_path: str) -> AEBundle:
  manifest = utils.read_json(manifest_path)
  tensor_path = manifest_path[:-len('.json')] + '.tensor'
  with open(tensor_path, 'rb') as f:
    tensor = decode_tensor(f.read())
  return AEBundle(tensor=tensor, **manifest)


def load_bundles(directory: str, surrogate: Optional[str] = None,
                 scheme: Optional[str] = None) -> List[AEBundle]:
  """Load bundles from a directory, ordered by (surrogate, scheme, image)."""
  bundles = [load_bundle(path)
             for path in sorted(glob.glob(os.path.join(directory, '*.json')))]
  bundles = [b for b in bundles
             if (surrogate is None or b.surrogate == surrogate) and
             (scheme is None or b.scheme == scheme)]
  bundles.sort(key=lambda b: (b.surrogate, b.scheme, b.image_id))
  logging.info('Loaded %d bundles from %s', len(bundles), directory)
  return bundles
