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
"""Small CNN classifiers with a named feature tap, training and checkpoints."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import json
import os
import struct

from absl import logging
import numpy as np
import pandas as pd
import scipy.special
from typing import (Any, Callable, Dict, List, NamedTuple, Optional, Sequence,
                    Tuple)

# pylint: disable=g-bad-import-order
from targeted_transfer import data
from targeted_transfer import layers
from targeted_transfer import utils


CHECKPOINT_MAGIC = b'AAFM'
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
  """Raised when training diverges."""


class ModelArch(NamedTuple):
  """A layer sequence with the index of the layer used as feature tap."""
  name: str
  input_shape: Tuple[int, ...]
  layers: Tuple[layers.LayerSpec, ...]
  tap_layer: int

  @property
  def num_classes(self) -> int:
    return layers.infer_shapes(self.layers, self.input_shape)[-1][0]

  def feature_shape(self) -> Tuple[int, ...]:
    shapes = layers.infer_shapes(self.layers, self.input_shape)
    return shapes[self.tap_layer + 1]


def _validate_arch(arch: ModelArch) -> ModelArch:
  shapes = layers.infer_shapes(arch.layers, arch.input_shape)
  if not 0 <= arch.tap_layer < len(arch.layers):
    raise ValueError('tap_layer {} out of range for {}'
                     .format(arch.tap_layer, arch.name))
  if len(shapes[-1]) != 1:
    raise layers.ShapeError('{} must end in a flat logits layer, got {}'
                            .format(arch.name, shapes[-1]))
  return arch


def net_a(num_classes: int = 10, input_shape=(3, 32, 32)) -> ModelArch:
  """Four 3x3 convolutions in two max-pooled blocks, then an average pool."""
  channels = input_shape[0]
  specs = (
      layers.conv2d(channels, 16), layers.relu(),
      layers.conv2d(16, 16), layers.relu(),
      layers.maxpool2d(2),
      layers.conv2d(16, 32), layers.relu(),
      layers.conv2d(32, 32), layers.relu(),
      layers.maxpool2d(2),  # tap
      layers.avgpool2d(2),
      layers.flatten(),
      layers.dense(num_classes),
  )
  return _validate_arch(ModelArch('netA', tuple(input_shape), specs, 9))


def net_b(num_classes: int = 10, input_shape=(3, 32, 32)) -> ModelArch:
  """Six narrow 3x3 convolutions in three max-pooled blocks."""
  channels = input_shape[0]
  specs = (
      layers.conv2d(channels, 8), layers.relu(),
      layers.conv2d(8, 8), layers.relu(),
      layers.maxpool2d(2),
      layers.conv2d(8, 16), layers.relu(),
      layers.conv2d(16, 16), layers.relu(),
      layers.maxpool2d(2),  # tap
      layers.conv2d(16, 32), layers.relu(),
      layers.conv2d(32, 32), layers.relu(),
      layers.maxpool2d(2),
      layers.flatten(),
      layers.dense(num_classes),
  )
  return _validate_arch(ModelArch('netB', tuple(input_shape), specs, 9))


def net_c(num_classes: int = 10, input_shape=(3, 32, 32)) -> ModelArch:
  """Three wide convolutions with average pooling and a hidden dense layer."""
  channels = input_shape[0]
  specs = (
      layers.conv2d(channels, 32, kernel_size=5), layers.relu(),
      layers.avgpool2d(2),
      layers.conv2d(32, 48), layers.relu(),
      layers.avgpool2d(2),  # tap
      layers.conv2d(48, 48), layers.relu(),
      layers.maxpool2d(2),
      layers.flatten(),
      layers.dense(64), layers.relu(),
      layers.dense(num_classes),
  )
  return _validate_arch(ModelArch('netC', tuple(input_shape), specs, 5))


ARCHITECTURES = {
    'netA': net_a,
    'netB': net_b,
    'netC': net_c,
}  # type: Dict[str, Callable[..., ModelArch]]


def get_arch(name: str, num_classes: int = 10, input_shape=(3, 32, 32),
             tap_layer: Optional[int] = None) -> ModelArch:
  """Look up a named architecture, optionally overriding its feature tap."""
  if name not in ARCHITECTURES:
    raise ValueError('unknown architecture {!r}, expected one of {}'
                     .format(name, sorted(ARCHITECTURES)))
  arch = ARCHITECTURES[name](num_classes, tuple(input_shape))
  if tap_layer is not None:
    arch = _validate_arch(arch._replace(tap_layer=tap_layer))
  return arch


class TrainedModel(object):
  """Classifier weights together with their architecture."""

  def __init__(self,
               arch: ModelArch,
               params: List[layers.Params],
               train_seed: int = 0):
    self.arch = arch
    self.params = params
    self.train_seed = train_seed

  @property
  def name(self) -> str:
    return self.arch.name

  @property
  def num_classes(self) -> int:
    return self.arch.num_classes

  def astype(self, dtype: Any) -> 'TrainedModel':
    params = [None if p is None else {k: v.astype(dtype) for k, v in p.items()}
              for p in self.params]
    return TrainedModel(self.arch, params, self.train_seed)

  def _check_image(self, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.shape != tuple(self.arch.input_shape):
      raise layers.ShapeError('{} expects an image of shape {}, got {}'.format(
          self.name, tuple(self.arch.input_shape), image.shape))
    return image

  def logits(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Logits for a batch of images, evaluated in chunks."""
    images = np.asarray(images)
    if images.shape[1:] != tuple(self.arch.input_shape):
      raise layers.ShapeError('{} expects images of shape {}, got {}'.format(
          self.name, tuple(self.arch.input_shape), images.shape[1:]))
    outputs = []
    for start in range(0, images.shape[0], batch_size):
      output, _ = layers.forward(self.arch.layers, self.params,
                                 images[start:start + batch_size])
      outputs.append(output)
    if not outputs:
      return np.zeros((0, self.num_classes), dtype=np.float32)
    return np.concatenate(outputs, axis=0)

  def tap_forward(
      self, image: np.ndarray, record: bool = False
  ) -> Tuple[np.ndarray, np.ndarray, Optional[layers.Tape]]:
    """Feature at the tap layer, logits and (optionally) the tape.

    The image may be a single CxHxW image or a batch; outputs follow suit.
    """
    image = np.asarray(image)
    single = image.ndim == len(self.arch.input_shape)
    batch = self._check_image(image)[np.newaxis] if single else image
    feature, logits, tape = layers.forward_with_features(
        self.arch.layers, self.params, batch, self.arch.tap_layer, record)
    if single:
      feature, logits = feature[0], logits[0]
    return feature, logits, tape


def predict(model: TrainedModel, image: np.ndarray) -> Tuple[np.ndarray, int]:
  """Logits and argmax class, ties broken by the lowest class index."""
  image = model._check_image(image)  # pylint: disable=protected-access
  output, _ = layers.forward(model.arch.layers, model.params,
                             image[np.newaxis])
  logits = output[0]
  return logits, int(np.argmax(logits))


def tap_forward(model: TrainedModel, image: np.ndarray, record: bool = False):
  return model.tap_forward(image, record)


def accuracy(model: TrainedModel, dataset: data.Dataset) -> float:
  if not len(dataset):
    raise ValueError('cannot compute accuracy of an empty dataset')
  predictions = model.logits(dataset.images).argmax(axis=-1)
  return float(np.mean(predictions == dataset.labels))


def disagreement(models: Sequence[TrainedModel], images: np.ndarray) -> float:
  """Fraction of images on which not all models predict the same class."""
  predictions = np.stack([m.logits(images).argmax(axis=-1) for m in models])
  return float(np.mean((predictions != predictions[:1]).any(axis=0)))


def cross_entropy(logits: np.ndarray,
                  labels: np.ndarray) -> Tuple[float, np.ndarray]:
  """Mean cross-entropy over a batch and its gradient with respect to logits."""
  log_probs = logits - scipy.special.logsumexp(logits, axis=-1, keepdims=True)
  batch = logits.shape[0]
  loss = -float(np.mean(log_probs[np.arange(batch), labels]))
  grad = np.exp(log_probs)
  grad[np.arange(batch), labels] -= 1
  return loss, (grad / batch).astype(logits.dtype)


def training_loop(arch: ModelArch,
                  dataset: data.Dataset,
                  epochs: int,
                  learning_rate: float,
                  seed: int,
                  batch_size: int = 64,
                  momentum: float = 0.9,
                  eval_dataset: Optional[data.Dataset] = None,
                  ) -> Tuple[TrainedModel, pd.DataFrame]:
  """Train with minibatch SGD and momentum on the cross-entropy loss.

  Args:
    arch: model architecture.
    dataset: training split.
    epochs: number of passes over the data.
    learning_rate: SGD step size.
    seed: seed for weight initialization and batch shuffling.
    batch_size: minibatch size.
    momentum: SGD momentum coefficient.
    eval_dataset: optional dataset for per-epoch evaluation.

  Returns:
    Trained model and a DataFrame with one row of metrics per epoch.

  Raises:
    TrainingError: if the loss becomes NaN or infinite.
  """
  if dataset.split is not data.Split.TRAIN:
    raise ValueError('training requires a train split, got {}'
                     .format(dataset.split.value))
  if tuple(dataset.image_shape) != tuple(arch.input_shape):
    raise layers.ShapeError('dataset images {} do not match {} input {}'
                            .format(dataset.image_shape, arch.name,
                                    arch.input_shape))
  if dataset.num_classes != arch.num_classes:
    raise ValueError('dataset has {} classes, {} outputs {}'.format(
        dataset.num_classes, arch.name, arch.num_classes))

  random_state = np.random.RandomState(utils.derive_seed(seed, 0, 'init'))
  params = layers.init_params(arch.layers, arch.input_shape, random_state)
  velocity = [None if p is None else {k: np.zeros_like(v) for k, v in p.items()}
              for p in params]
  shuffle_state = np.random.RandomState(utils.derive_seed(seed, 0, 'shuffle'))

  logging.info('Training %s on %d images for %d epochs', arch.name,
               len(dataset), epochs)
  logged_metrics = []
  for epoch in range(epochs):
    order = shuffle_state.permutation(len(dataset))
    total_loss = 0.0
    for start in range(0, len(order), batch_size):
      index = order[start:start + batch_size]
      logits, tape = layers.forward(arch.layers, params,
                                    dataset.images[index], record=True)
      loss, grad_logits = cross_entropy(logits, dataset.labels[index])
      if not np.isfinite(loss):
        raise TrainingError('{} diverged at epoch {}: loss is {}'
                            .format(arch.name, epoch, loss))
      total_loss += loss * len(index)
      _, grads = layers.parameter_gradients(tape, grad_logits)
      for p, v, g in zip(params, velocity, grads):
        if p is None:
          continue
        for key in p:
          v[key] *= momentum
          v[key] += g[key].astype(v[key].dtype)
          p[key] -= (learning_rate * v[key]).astype(p[key].dtype)

    model = TrainedModel(arch, params, seed)
    metrics = {'epoch': epoch, 'loss': total_loss / len(dataset),
               'train_accuracy': accuracy(model, dataset)}
    if eval_dataset is not None:
      metrics['eval_accuracy'] = accuracy(model, eval_dataset)
    logging.info('%s epoch %d: %s', arch.name, epoch, ', '.join(
        '{}={:1.4f}'.format(k, v) for k, v in sorted(metrics.items())
        if k != 'epoch'))
    logged_metrics.append(metrics)

  model = TrainedModel(arch, params, seed)
  return model, pd.DataFrame(logged_metrics)


def train(arch: ModelArch, dataset: data.Dataset, epochs: int,
          learning_rate: float, seed: int, **kwargs: Any) -> TrainedModel:
  model, _ = training_loop(arch, dataset, epochs, learning_rate, seed,
                           **kwargs)
  return model


def _param_arrays(model: TrainedModel) -> List[Tuple[str, np.ndarray]]:
  arrays = []
  for index, p in enumerate(model.params):
    if p is None:
      continue
    for key in ('w', 'b'):
      arrays.append(('{}/{}'.format(index, key), p[key]))
  return arrays


def to_checkpoint(model: TrainedModel) -> bytes:
  """Serialize a model: magic, version, header length, JSON header, weights."""
  arrays = _param_arrays(model)
  header = {
      'arch': model.arch.name,
      'input_shape': list(model.arch.input_shape),
      'tap_layer': model.arch.tap_layer,
      'layers': [spec.to_dict() for spec in model.arch.layers],
      'layer_shapes': [[name, list(array.shape)] for name, array in arrays],
      'train_seed': model.train_seed,
      'class_count': model.num_classes,
  }
  header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
  chunks = [CHECKPOINT_MAGIC,
            struct.pack('<II', CHECKPOINT_VERSION, len(header_bytes)),
            header_bytes]
  chunks.extend(np.ascontiguousarray(array, dtype='<f4').tobytes()
                for _, array in arrays)
  return b''.join(chunks)


def from_checkpoint(blob: bytes) -> TrainedModel:
  """Inverse of to_checkpoint()."""
  if blob[:4] != CHECKPOINT_MAGIC:
    raise data.FormatError('not a model checkpoint: bad magic {!r}'
                           .format(blob[:4]))
  version, header_length = struct.unpack('<II', blob[4:12])
  if version != CHECKPOINT_VERSION:
    raise data.FormatError('unsupported checkpoint version {}'.format(version))
  header = json.loads(blob[12:12 + header_length].decode('utf-8'))
  specs = tuple(layers.LayerSpec.from_dict(d) for d in header['layers'])
  arch = _validate_arch(ModelArch(header['arch'], tuple(header['input_shape']),
                                  specs, header['tap_layer']))

  params = [None] * len(specs)  # type: List[layers.Params]
  offset = 12 + header_length
  for name, shape in header['layer_shapes']:
    index, key = name.split('/')
    count = int(np.prod(shape))
    end = offset + 4 * count
    if end > len(blob):
      raise data.FormatError('checkpoint truncated at byte offset {}'
                             .format(len(blob)))
    array = np.frombuffer(blob[offset:end], dtype='<f4').reshape(shape)
    if params[int(index)] is None:
      params[int(index)] = {}
    params[int(index)][key] = array.astype(np.float32)
    offset = end
  if offset != len(blob):
    raise data.FormatError('{} trailing bytes after checkpoint weights'
                           .format(len(blob) - offset))
  model = TrainedModel(arch, params, header['train_seed'])
  if model.num_classes != header['class_count']:
    raise data.FormatError('class count mismatch in checkpoint header')
  return model


def save_checkpoint(model: TrainedModel, path: str) -> None:
  utils.makedirs(os.path.dirname(path))
  with open(path, 'wb') as f:
    f.write(to_checkpoint(model))


def load_checkpoint(path: str) -> TrainedModel:
  with open(path, 'rb') as f:
    return from_checkpoint(f.read())
