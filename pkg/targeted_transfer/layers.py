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
"""Differentiable layers for small 2D convolutional networks.

Activations are batched NCHW arrays (or [batch, units] after flatten). The
forward pass optionally records a tape, from which backward() computes exact
reverse-mode gradients with respect to the input, any intermediate activation,
or the layer parameters.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import enum

import numpy as np
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union


Shape = Tuple[int, ...]  # pylint: disable=invalid-name
Params = Optional[Dict[str, np.ndarray]]  # pylint: disable=invalid-name

# selector for backward(): the network input, or an integer layer index whose
# output activation is requested.
INPUT = 'input'
OUTPUT = 'output'
Selector = Union[str, int]  # pylint: disable=invalid-name


class ShapeError(ValueError):
  """Raised when an array does not have the shape a layer expects."""


class TapeError(RuntimeError):
  """Raised when gradients are requested without a recorded tape."""


@enum.unique
class LayerKind(enum.Enum):
  """Supported layer types."""
  CONV2D = 'conv2d'
  RELU = 'relu'
  MAXPOOL2D = 'maxpool2d'
  AVGPOOL2D = 'avgpool2d'
  FLATTEN = 'flatten'
  DENSE = 'dense'


class LayerSpec(NamedTuple):
  """Static description of a single layer.

  Only the fields relevant to `kind` are used: conv2d uses in_channels,
  out_channels, kernel_size, stride and padding; the pooling layers use
  kernel_size and stride; dense uses units (input size is inferred).
  """
  kind: LayerKind
  in_channels: int = 0
  out_channels: int = 0
  kernel_size: int = 1
  stride: int = 1
  padding: int = 0
  units: int = 0

  @property
  def has_params(self) -> bool:
    return self.kind in (LayerKind.CONV2D, LayerKind.DENSE)

  def output_shape(self, input_shape: Shape, index: int = 0) -> Shape:
    """Per-example output shape, or raise ShapeError naming this layer."""
    name = 'layer {} ({})'.format(index, self.kind.value)
    if self.kind in (LayerKind.CONV2D, LayerKind.MAXPOOL2D,
                     LayerKind.AVGPOOL2D):
      if len(input_shape) != 3:
        raise ShapeError('{} expects a CxHxW input, got shape {}'
                         .format(name, input_shape))
      channels, height, width = input_shape
      if self.kind is LayerKind.CONV2D:
        if channels != self.in_channels:
          raise ShapeError('{} expects {} input channels, got {}'
                           .format(name, self.in_channels, channels))
        padding = self.padding
        channels = self.out_channels
      else:
        padding = 0
      out_height = (height + 2 * padding - self.kernel_size) // self.stride + 1
      out_width = (width + 2 * padding - self.kernel_size) // self.stride + 1
      if out_height < 1 or out_width < 1:
        raise ShapeError('{} with kernel {} does not fit input shape {}'
                         .format(name, self.kernel_size, input_shape))
      return (channels, out_height, out_width)
    elif self.kind is LayerKind.RELU:
      return tuple(input_shape)
    elif self.kind is LayerKind.FLATTEN:
      return (int(np.prod(input_shape)),)
    elif self.kind is LayerKind.DENSE:
      if len(input_shape) != 1:
        raise ShapeError('{} expects a flat input, got shape {}'
                         .format(name, input_shape))
      return (self.units,)
    raise ValueError('unexpected layer kind: {}'.format(self.kind))

  def parameter_shapes(self, input_shape: Shape) -> Dict[str, Shape]:
    if self.kind is LayerKind.CONV2D:
      return {'w': (self.out_channels, self.in_channels,
                    self.kernel_size, self.kernel_size),
              'b': (self.out_channels,)}
    elif self.kind is LayerKind.DENSE:
      return {'w': (input_shape[0], self.units), 'b': (self.units,)}
    return {}

  def to_dict(self) -> Dict[str, Any]:
    result = self._asdict()
    result['kind'] = self.kind.value
    return result

  @classmethod
  def from_dict(cls, values: Dict[str, Any]) -> 'LayerSpec':
    values = dict(values)
    values['kind'] = LayerKind(values['kind'])
    return cls(**values)


def conv2d(in_channels: int, out_channels: int, kernel_size: int = 3,
           stride: int = 1, padding: int = None) -> LayerSpec:
  if padding is None:
    padding = kernel_size // 2
  return LayerSpec(LayerKind.CONV2D, in_channels=in_channels,
                   out_channels=out_channels, kernel_size=kernel_size,
                   stride=stride, padding=padding)


def relu() -> LayerSpec:
  return LayerSpec(LayerKind.RELU)


def maxpool2d(size: int = 2, stride: int = None) -> LayerSpec:
  return LayerSpec(LayerKind.MAXPOOL2D, kernel_size=size,
                   stride=size if stride is None else stride)


def avgpool2d(size: int = 2, stride: int = None) -> LayerSpec:
  return LayerSpec(LayerKind.AVGPOOL2D, kernel_size=size,
                   stride=size if stride is None else stride)


def flatten() -> LayerSpec:
  return LayerSpec(LayerKind.FLATTEN)


def dense(units: int) -> LayerSpec:
  return LayerSpec(LayerKind.DENSE, units=units)


def infer_shapes(layers: Sequence[LayerSpec],
                 input_shape: Shape) -> List[Shape]:
  """Per-example activation shapes, starting with the input shape."""
  shapes = [tuple(input_shape)]
  for index, layer in enumerate(layers):
    shapes.append(layer.output_shape(shapes[-1], index))
  return shapes


def init_params(layers: Sequence[LayerSpec],
                input_shape: Shape,
                random_state: np.random.RandomState,
                dtype: Any = np.float32) -> List[Params]:
  """He-normal weights and zero biases for every parameterized layer."""
  shapes = infer_shapes(layers, input_shape)
  params = []
  for layer, in_shape in zip(layers, shapes):
    if not layer.has_params:
      params.append(None)
      continue
    param_shapes = layer.parameter_shapes(in_shape)
    w_shape = param_shapes['w']
    if layer.kind is LayerKind.CONV2D:
      fan_in = int(np.prod(w_shape[1:]))
    else:
      fan_in = w_shape[0]
    w = random_state.normal(0, np.sqrt(2.0 / fan_in), size=w_shape)
    params.append({'w': w.astype(dtype),
                   'b': np.zeros(param_shapes['b'], dtype=dtype)})
  return params


def _pad2d(x: np.ndarray, padding: int) -> np.ndarray:
  if not padding:
    return x
  pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
  return np.pad(x, pad, mode='constant')


def _windows(x: np.ndarray, size: int, stride: int) -> np.ndarray:
  """Strided view with shape [batch, channel, out_h, out_w, size, size]."""
  view = np.lib.stride_tricks.sliding_window_view(x, (size, size), axis=(2, 3))
  return view[:, :, ::stride, ::stride]


def _scatter_windows(grad_windows: np.ndarray, input_shape: Shape,
                     stride: int) -> np.ndarray:
  """Adjoint of _windows(): sum window gradients back onto the input."""
  result = np.zeros(input_shape, dtype=grad_windows.dtype)
  _, _, out_h, out_w, size, _ = grad_windows.shape
  for i in range(size):
    for j in range(size):
      result[:, :, i:i + stride * out_h:stride,
             j:j + stride * out_w:stride] += grad_windows[..., i, j]
  return result


class TapeNode(NamedTuple):
  """Everything a single layer needs for its backward pass."""
  index: int
  layer: LayerSpec
  params: Params
  input_shape: Shape
  saved: Dict[str, np.ndarray]


class Tape(object):
  """Recorded forward pass over a layer sequence."""

  def __init__(self, nodes: List[TapeNode], output_shape: Shape):
    self.nodes = nodes
    self.output_shape = output_shape

  def activation_shape(self, selector: Selector) -> Shape:
    position = _position(selector, len(self.nodes))
    if position == len(self.nodes):
      return self.output_shape
    return self.nodes[position].input_shape


def _layer_forward(layer: LayerSpec, params: Params, x: np.ndarray,
                   record: bool) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
  """Apply one layer to a batch, returning the output and saved arrays."""
  saved = {}
  if layer.kind is LayerKind.CONV2D:
    cols = _windows(_pad2d(x, layer.padding), layer.kernel_size, layer.stride)
    out = np.tensordot(cols, params['w'], axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + params['b'][:, np.newaxis, np.newaxis]
    if record:
      saved['cols'] = cols
  elif layer.kind is LayerKind.RELU:
    out = np.maximum(x, 0)
    if record:
      saved['mask'] = x > 0
  elif layer.kind is LayerKind.MAXPOOL2D:
    windows = _windows(x, layer.kernel_size, layer.stride)
    flat = windows.reshape(windows.shape[:4] + (-1,))
    # argmax picks the first maximum, so ties route gradients consistently
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., np.newaxis], axis=-1)[..., 0]
    if record:
      saved['argmax'] = argmax
  elif layer.kind is LayerKind.AVGPOOL2D:
    out = _windows(x, layer.kernel_size, layer.stride).mean(axis=(4, 5))
  elif layer.kind is LayerKind.FLATTEN:
    out = x.reshape(x.shape[0], -1)
  elif layer.kind is LayerKind.DENSE:
    out = x @ params['w'] + params['b']
    if record:
      saved['x'] = x
  else:
    raise ValueError('unexpected layer kind: {}'.format(layer.kind))
  return out, saved


def _layer_backward(node: TapeNode, grad: np.ndarray,
                    need_params: bool) -> Tuple[np.ndarray, Params]:
  """Gradient with respect to a layer's input (and optionally its params)."""
  layer = node.layer
  batch_shape = (grad.shape[0],) + tuple(node.input_shape)
  param_grads = None
  if layer.kind is LayerKind.CONV2D:
    cols = node.saved['cols']
    w = node.params['w']
    if need_params:
      param_grads = {
          'w': np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3])),
          'b': grad.sum(axis=(0, 2, 3)),
      }
    grad_cols = np.tensordot(grad, w, axes=([1], [0]))
    grad_cols = grad_cols.transpose(0, 3, 1, 2, 4, 5)
    padded_shape = batch_shape[:2] + tuple(
        size + 2 * layer.padding for size in batch_shape[2:])
    grad_padded = _scatter_windows(grad_cols, padded_shape, layer.stride)
    if layer.padding:
      p = layer.padding
      grad_in = grad_padded[:, :, p:-p, p:-p]
    else:
      grad_in = grad_padded
  elif layer.kind is LayerKind.RELU:
    grad_in = grad * node.saved['mask']
  elif layer.kind is LayerKind.MAXPOOL2D:
    size = layer.kernel_size
    onehot = (node.saved['argmax'][..., np.newaxis]
              == np.arange(size * size))
    grad_windows = (grad[..., np.newaxis] * onehot).reshape(
        grad.shape + (size, size))
    grad_in = _scatter_windows(grad_windows, batch_shape, layer.stride)
  elif layer.kind is LayerKind.AVGPOOL2D:
    size = layer.kernel_size
    grad_windows = np.broadcast_to(
        (grad / (size * size))[..., np.newaxis, np.newaxis],
        grad.shape + (size, size))
    grad_in = _scatter_windows(grad_windows, batch_shape, layer.stride)
  elif layer.kind is LayerKind.FLATTEN:
    grad_in = grad.reshape(batch_shape)
  elif layer.kind is LayerKind.DENSE:
    if need_params:
      param_grads = {'w': node.saved['x'].T @ grad, 'b': grad.sum(axis=0)}
    grad_in = grad @ node.params['w'].T
  else:
    raise ValueError('unexpected layer kind: {}'.format(layer.kind))
  return grad_in, param_grads


def _position(selector: Selector, num_layers: int) -> int:
  """Activation position: 0 is the input, i + 1 the output of layer i."""
  if selector == INPUT:
    return 0
  if selector == OUTPUT:
    return num_layers
  if not isinstance(selector, (int, np.integer)):
    raise ValueError('invalid activation selector: {!r}'.format(selector))
  if not 0 <= selector < num_layers:
    raise ValueError('layer index {} out of range for {} layers'
                     .format(selector, num_layers))
  return int(selector) + 1


def forward_with_features(
    layers: Sequence[LayerSpec],
    params: Sequence[Params],
    inputs: np.ndarray,
    feature_layer: Optional[int] = None,
    record: bool = False,
) -> Tuple[Optional[np.ndarray], np.ndarray, Optional[Tape]]:
  """Run a batch through all layers, optionally capturing one activation.

  Args:
    layers: layer sequence.
    params: parameters for each layer (None for parameter-free layers).
    inputs: batch with shape [batch, ...] matching the first layer.
    feature_layer: optional index of the layer whose output to return.
    record: whether to record a tape for backward().

  Returns:
    Tuple (feature, output, tape). feature is None if no feature_layer was
    given; tape is None unless record is set.

  Raises:
    ShapeError: if the input does not fit the layer sequence.
  """
  if len(params) != len(layers):
    raise ValueError('got {} parameter entries for {} layers'
                     .format(len(params), len(layers)))
  x = np.asarray(inputs)
  if x.ndim < 2:
    raise ShapeError('inputs must be batched, got shape {}'.format(x.shape))
  shapes = infer_shapes(layers, x.shape[1:])

  nodes = []
  feature = None
  for index, (layer, layer_params) in enumerate(zip(layers, params)):
    out, saved = _layer_forward(layer, layer_params, x, record)
    if record:
      nodes.append(TapeNode(index, layer, layer_params, shapes[index], saved))
    if index == feature_layer:
      feature = out
    x = out
  tape = Tape(nodes, shapes[-1]) if record else None
  return feature, x, tape


def forward(layers: Sequence[LayerSpec],
            params: Sequence[Params],
            inputs: np.ndarray,
            record: bool = False) -> Tuple[np.ndarray, Optional[Tape]]:
  """Compose all layers over a batch; see forward_with_features()."""
  _, output, tape = forward_with_features(layers, params, inputs, None, record)
  return output, tape


def _backpropagate(tape: Optional[Tape], seed: np.ndarray, wrt: Selector,
                   seed_at: Selector, need_params: bool):
  if tape is None:
    raise TapeError('backward requires a forward pass with record=True')
  num_layers = len(tape.nodes)
  start = _position(seed_at, num_layers)
  stop = _position(wrt, num_layers)
  if stop > start:
    raise ValueError('cannot differentiate activation {!r} with respect to '
                     'later activation {!r}'.format(seed_at, wrt))
  expected = tape.activation_shape(seed_at)
  if tuple(seed.shape[1:]) != tuple(expected):
    raise ShapeError('seed shape {} does not match activation shape {}'
                     .format(seed.shape[1:], expected))

  grad = seed
  param_grads = [None] * num_layers
  for node in reversed(tape.nodes[stop:start]):
    grad, param_grads[node.index] = _layer_backward(node, grad, need_params)
  return grad, param_grads


def backward(tape: Optional[Tape],
             seed: np.ndarray,
             wrt: Selector = INPUT,
             seed_at: Selector = OUTPUT) -> np.ndarray:
  """Vector-Jacobian product through a recorded tape.

  Args:
    tape: tape from a forward pass with record=True.
    seed: array with the batched shape of the activation at `seed_at`.
    wrt: INPUT, or the index of the layer whose output to differentiate
      with respect to.
    seed_at: OUTPUT, or the index of the layer whose output the seed is
      attached to.

  Returns:
    d(sum(seed * activation[seed_at])) / d(activation[wrt]), batched.

  Raises:
    TapeError: if no tape was recorded.
    ShapeError: if the seed has the wrong shape.
  """
  grad, _ = _backpropagate(tape, np.asarray(seed), wrt, seed_at,
                           need_params=False)
  return grad


def parameter_gradients(
    tape: Optional[Tape], seed: np.ndarray) -> Tuple[np.ndarray, List[Params]]:
  """Gradients of sum(seed * output) for the input and every parameter."""
  return _backpropagate(tape, np.asarray(seed), INPUT, OUTPUT,
                        need_params=True)
