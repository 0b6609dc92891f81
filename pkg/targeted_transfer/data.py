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
"""Small deterministic image classification datasets."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import dataclasses
import enum
import io
import json

import numpy as np
from PIL import Image
from typing import Any, Dict, Iterator, NamedTuple

from targeted_transfer import utils  # pylint: disable=g-bad-import-order


CIFAR10_SIDE = 32
CIFAR10_CLASSES = 10
CIFAR10_RECORD_BYTES = 1 + 3 * CIFAR10_SIDE * CIFAR10_SIDE


class FormatError(ValueError):
  """Raised for malformed binary input."""


class RangeError(ValueError):
  """Raised when pixel values fall outside [0, 1]."""


@enum.unique
class Split(enum.Enum):
  TRAIN = 'train'
  EVAL = 'eval'
  ATTACK = 'attack'


# Per-image seeds for each split start at these offsets, so that splits built
# from the same dataset seed never share an image.
SPLIT_SEED_OFFSETS = {
    Split.TRAIN: 0,
    Split.EVAL: 1000000,
    Split.ATTACK: 2000000,
}


class LabeledImage(NamedTuple):
  pixels: np.ndarray  # float32 [channel, height, width] in [0, 1]
  label: int


class Dataset(object):
  """Images with shape [count, channel, height, width] and integer labels."""

  def __init__(self,
               images: np.ndarray,
               labels: np.ndarray,
               num_classes: int,
               split: Split = Split.TRAIN,
               manifest: Dict[str, Any] = None):
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 4:
      raise ValueError('images must have shape [count, C, H, W], got {}'
                       .format(images.shape))
    if labels.shape != images.shape[:1]:
      raise ValueError('labels shape {} does not match {} images'
                       .format(labels.shape, images.shape[0]))
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
      raise ValueError('labels must lie in [0, {})'.format(num_classes))
    self.images = images
    self.labels = labels
    self.num_classes = num_classes
    self.split = Split(split)
    self.manifest = manifest

  def __len__(self) -> int:
    return self.images.shape[0]

  def __getitem__(self, index: int) -> LabeledImage:
    return LabeledImage(self.images[index], int(self.labels[index]))

  def __iter__(self) -> Iterator[LabeledImage]:
    for i in range(len(self)):
      yield self[i]

  @property
  def image_shape(self):
    return self.images.shape[1:]

  def take(self, count: int) -> 'Dataset':
    return Dataset(self.images[:count], self.labels[:count], self.num_classes,
                   self.split, self.manifest)


@dataclasses.dataclass(frozen=True)
class DatasetSpec(object):
  """Manifest describing a synthetic dataset; serialized as JSON."""
  seed: int = 0
  n: int = 2000
  k: int = 10
  side: int = 32
  split: str = 'train'

  def to_dict(self) -> Dict[str, Any]:
    return dataclasses.asdict(self)

  @classmethod
  def from_dict(cls, values: Dict[str, Any]) -> 'DatasetSpec':
    return cls(**values)


_NUM_SHAPES = 10
# Shapes differ from their background by this much in every channel; colors
# carry no class information.
_CONTRAST_RANGE = (0.12, 0.24)
_NOISE_STDDEV = 0.04
# Classes beyond the first _NUM_SHAPES reuse the shapes at a smaller scale.
_VARIANT_SCALE = 1.5


def _shape_mask(shape_id: int, x: np.ndarray, y: np.ndarray,
                phase: float) -> np.ndarray:
  """Boolean foreground mask for one of the class shapes."""
  r = np.sqrt(x ** 2 + y ** 2)
  box = np.maximum(abs(x), abs(y))
  if shape_id == 0:  # disk
    return r < 0.6
  elif shape_id == 1:  # square
    return box < 0.55
  elif shape_id == 2:  # ring
    return (r > 0.35) & (r < 0.7)
  elif shape_id == 3:  # horizontal bars
    return (np.sin(np.pi * (3 * y + phase)) > 0) & (box < 0.8)
  elif shape_id == 4:  # vertical bars
    return (np.sin(np.pi * (3 * x + phase)) > 0) & (box < 0.8)
  elif shape_id == 5:  # diagonal stripes
    return (np.sin(np.pi * (2.5 * (x + y) + phase)) > 0) & (box < 0.8)
  elif shape_id == 6:  # cross
    return ((abs(x) < 0.2) | (abs(y) < 0.2)) & (box < 0.75)
  elif shape_id == 7:  # checkerboard
    return np.sin(np.pi * 2 * x + phase) * np.sin(np.pi * 2 * y + phase) > 0
  elif shape_id == 8:  # triangle
    return (y > -0.55) & (y < 0.6) & (abs(x) < 0.6 * (y + 0.55))
  elif shape_id == 9:  # dots
    return np.sin(np.pi * 3 * x + phase) * np.sin(np.pi * 3 * y + phase) > 0.5
  raise ValueError('unknown shape: {}'.format(shape_id))


def _render(label: int, side: int,
            random_state: np.random.RandomState) -> np.ndarray:
  """Draw one jittered, noisy, low-contrast image of the given class."""
  shape_id = label % _NUM_SHAPES
  variant = label // _NUM_SHAPES

  center = random_state.uniform(-0.15, 0.15, size=2)
  scale = random_state.uniform(0.75, 1.05) / _VARIANT_SCALE ** variant
  phase = random_state.uniform(0, 2)
  coords = (np.arange(side) + 0.5) / side * 2 - 1
  y, x = np.meshgrid(coords, coords, indexing='ij')
  mask = _shape_mask(shape_id, (x - center[0]) / scale,
                     (y - center[1]) / scale, phase)

  background = random_state.uniform(0.2, 0.6, size=3)
  foreground = background + random_state.uniform(*_CONTRAST_RANGE)
  image = np.where(mask[np.newaxis], foreground[:, np.newaxis, np.newaxis],
                   background[:, np.newaxis, np.newaxis])
  image = image + random_state.normal(0, _NOISE_STDDEV, size=image.shape)
  return np.clip(image, 0, 1).astype(np.float32)


def synth_dataset(seed: int, n: int, k: int = 10, side: int = 32,
                  split: str = 'train') -> Dataset:
  """Deterministic synthetic shapes dataset.

  Image i has label i % k and is drawn from its own random stream, seeded by
  (seed, i + split offset), so splits never overlap and any prefix of a dataset
  equals the smaller dataset with the same seed.

  Args:
    seed: integer dataset seed.
    n: number of images.
    k: number of classes, at least 3.
    side: image height and width in pixels, at least 16.
    split: 'train', 'eval' or 'attack'.

  Returns:
    Dataset with float32 images of shape [n, 3, side, side].
  """
  if k < 3:
    raise ValueError('need at least 3 classes, got {}'.format(k))
  if side < 16:
    raise ValueError('side must be at least 16, got {}'.format(side))
  split = Split(split)
  offset = SPLIT_SEED_OFFSETS[split]
  images = np.zeros((n, 3, side, side), dtype=np.float32)
  labels = np.arange(n) % k
  for i in range(n):
    random_state = np.random.RandomState(
        utils.derive_seed(seed, i + offset, 'synth'))
    images[i] = _render(int(labels[i]), side, random_state)
  manifest = DatasetSpec(seed, n, k, side, split.value).to_dict()
  return Dataset(images, labels, k, split, manifest)


def synth_dataset_from_spec(spec: DatasetSpec) -> Dataset:
  return synth_dataset(spec.seed, spec.n, spec.k, spec.side, spec.split)


def parse_cifar10(data: bytes, split: str = 'train') -> Dataset:
  """Parse the CIFAR-10 binary format.

  Each record is one label byte followed by 3072 pixel bytes: the red, green
  and blue planes in turn, each 32x32 in row-major order.

  Args:
    data: contents of a batch file.
    split: split tag for the returned dataset. data_batch_* files hold
      training images and test_batch the held-out ones.

  Returns:
    Dataset with pixels mapped to [0, 1] by byte / 255.

  Raises:
    FormatError: if the stream is truncated or a label exceeds 9.
  """
  count, remainder = divmod(len(data), CIFAR10_RECORD_BYTES)
  if remainder:
    raise FormatError(
        'truncated CIFAR-10 stream: incomplete record at byte offset {} '
        '({} of {} bytes present)'.format(
            count * CIFAR10_RECORD_BYTES, remainder, CIFAR10_RECORD_BYTES))
  records = np.frombuffer(data, dtype=np.uint8).reshape(
      count, CIFAR10_RECORD_BYTES)
  labels = records[:, 0].astype(np.int64)
  bad = np.flatnonzero(labels >= CIFAR10_CLASSES)
  if bad.size:
    raise FormatError('invalid label {} at byte offset {}'.format(
        labels[bad[0]], bad[0] * CIFAR10_RECORD_BYTES))
  pixels = records[:, 1:].reshape(count, 3, CIFAR10_SIDE, CIFAR10_SIDE)
  images = pixels.astype(np.float32) / 255
  return Dataset(images, labels, CIFAR10_CLASSES, split)


def serialize_cifar10(dataset: Dataset) -> bytes:
  """Inverse of parse_cifar10(), quantizing pixels to round(255 * p)."""
  if dataset.image_shape != (3, CIFAR10_SIDE, CIFAR10_SIDE):
    raise ValueError('CIFAR-10 records hold 3x32x32 images, got {}'
                     .format(dataset.image_shape))
  if dataset.labels.size and dataset.labels.max() >= CIFAR10_CLASSES:
    raise ValueError('CIFAR-10 labels must be below {}'.format(CIFAR10_CLASSES))
  count = len(dataset)
  records = np.empty((count, CIFAR10_RECORD_BYTES), dtype=np.uint8)
  records[:, 0] = dataset.labels
  records[:, 1:] = _to_bytes(dataset.images).reshape(count, -1)
  return records.tobytes()


def load_cifar10(path: str, split: str = 'train') -> Dataset:
  with open(path, 'rb') as f:
    return parse_cifar10(f.read(), split)


def _to_bytes(pixels: np.ndarray) -> np.ndarray:
  return np.round(np.asarray(pixels, dtype=np.float64) * 255).astype(np.uint8)


def export_png(image: np.ndarray) -> bytes:
  """Encode a [channel, height, width] image in [0, 1] as an 8-bit RGB PNG.

  Single-channel images are replicated across the three color channels.

  Raises:
    RangeError: if any value lies outside [0, 1].
  """
  image = np.asarray(image)
  if image.ndim != 3 or image.shape[0] not in (1, 3):
    raise ValueError('expected a 1xHxW or 3xHxW image, got shape {}'
                     .format(image.shape))
  if not np.all(np.isfinite(image)) or image.min() < 0 or image.max() > 1:
    raise RangeError('pixel values must lie in [0, 1], got range [{}, {}]'
                     .format(image.min(), image.max()))
  if image.shape[0] == 1:
    image = np.repeat(image, 3, axis=0)
  array = np.ascontiguousarray(_to_bytes(image).transpose(1, 2, 0))
  buffer = io.BytesIO()
  Image.fromarray(array).save(buffer, format='PNG')
  return buffer.getvalue()


def save_dataset(dataset: Dataset, path: str) -> None:
  """Write a dataset to HDF5, with its manifest stored as attributes."""
  with utils.write_h5py(path) as f:
    f.create_dataset('images', data=dataset.images)
    f.create_dataset('labels', data=dataset.labels)
    f.attrs['num_classes'] = dataset.num_classes
    f.attrs['split'] = dataset.split.value
    if dataset.manifest is not None:
      f.attrs['manifest'] = json.dumps(dataset.manifest, sort_keys=True)


def load_dataset(path: str) -> Dataset:
  with utils.read_h5py(path) as f:
    images = f['images'][...]
    labels = f['labels'][...]
    num_classes = int(f.attrs['num_classes'])
    split = str(f.attrs['split'])
    manifest = f.attrs.get('manifest')
  if manifest is not None:
    manifest = json.loads(manifest)
  return Dataset(images, labels, num_classes, split, manifest)
