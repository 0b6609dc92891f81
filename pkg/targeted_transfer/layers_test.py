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
"""Tests for layers."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl.testing import absltest  # pylint: disable=g-bad-import-order
from absl.testing import parameterized
import numpy as np

from targeted_transfer import layers  # pylint: disable=g-bad-import-order


SMALL_NET = (
    layers.conv2d(2, 3), layers.relu(),
    layers.maxpool2d(2),
    layers.conv2d(3, 4, kernel_size=3, stride=2, padding=1), layers.relu(),
    layers.avgpool2d(2),
    layers.flatten(),
    layers.dense(5),
)
SMALL_INPUT = (2, 8, 8)


def small_params(seed=0):
  return layers.init_params(SMALL_NET, SMALL_INPUT,
                            np.random.RandomState(seed), dtype=np.float64)


def relative_error(actual, expected):
  return (np.linalg.norm(actual - expected) /
          max(np.linalg.norm(expected), 1e-8))


class ShapeTest(absltest.TestCase):

  def test_infer_shapes(self):
    shapes = layers.infer_shapes(SMALL_NET, SMALL_INPUT)
    self.assertEqual(shapes, [(2, 8, 8), (3, 8, 8), (3, 8, 8), (3, 4, 4),
                              (4, 2, 2), (4, 2, 2), (4, 1, 1), (4,), (5,)])

  def test_wrong_channels_names_layer(self):
    with self.assertRaisesRegex(layers.ShapeError, 'layer 0'):
      layers.infer_shapes(SMALL_NET, (3, 8, 8))

  def test_dense_needs_flat_input(self):
    with self.assertRaisesRegex(layers.ShapeError, 'layer 1'):
      layers.infer_shapes((layers.relu(), layers.dense(2)), (1, 4, 4))

  def test_init_params(self):
    params = small_params()
    self.assertIsNone(params[1])
    self.assertEqual(params[0]['w'].shape, (3, 2, 3, 3))
    self.assertEqual(params[7]['w'].shape, (4, 5))
    np.testing.assert_array_equal(params[7]['b'], np.zeros(5))
    # same seed, same weights
    np.testing.assert_array_equal(params[0]['w'], small_params()[0]['w'])

  def test_layer_spec_dict(self):
    spec = layers.conv2d(3, 8, kernel_size=5)
    self.assertEqual(layers.LayerSpec.from_dict(spec.to_dict()), spec)
    self.assertEqual(spec.to_dict()['kind'], 'conv2d')


class ForwardTest(absltest.TestCase):

  def test_conv2d_matches_direct_sum(self):
    random_state = np.random.RandomState(0)
    spec = layers.conv2d(2, 3, kernel_size=3, padding=1)
    params = layers.init_params([spec], (2, 5, 5), random_state, np.float64)
    params[0]['b'] = random_state.randn(3)
    x = random_state.rand(1, 2, 5, 5)
    output, _ = layers.forward([spec], params, x)

    padded = np.pad(x[0], ((0, 0), (1, 1), (1, 1)))
    expected = np.zeros((3, 5, 5))
    for o in range(3):
      for i in range(5):
        for j in range(5):
          expected[o, i, j] = (
              np.sum(padded[:, i:i + 3, j:j + 3] * params[0]['w'][o]) +
              params[0]['b'][o])
    np.testing.assert_allclose(output[0], expected, rtol=1e-12)

  def test_pooling(self):
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    output, _ = layers.forward([layers.maxpool2d(2)], [None], x)
    np.testing.assert_array_equal(output[0, 0], [[5, 7], [13, 15]])
    output, _ = layers.forward([layers.avgpool2d(2)], [None], x)
    np.testing.assert_array_equal(output[0, 0], [[2.5, 4.5], [10.5, 12.5]])

  def test_maxpool_ties_route_to_first(self):
    x = np.ones((1, 1, 2, 2))
    _, tape = layers.forward([layers.maxpool2d(2)], [None], x, record=True)
    grad = layers.backward(tape, np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(grad[0, 0], [[1, 0], [0, 0]])

  def test_forward_with_features(self):
    params = small_params()
    x = np.random.RandomState(1).rand(3, *SMALL_INPUT)
    feature, output, tape = layers.forward_with_features(
        SMALL_NET, params, x, feature_layer=2)
    self.assertEqual(feature.shape, (3, 3, 4, 4))
    self.assertEqual(output.shape, (3, 5))
    self.assertIsNone(tape)
    direct, _ = layers.forward(SMALL_NET, params, x)
    np.testing.assert_array_equal(output, direct)

  def test_repeated_calls_are_identical(self):
    params = layers.init_params(SMALL_NET, SMALL_INPUT,
                                np.random.RandomState(2))
    x = np.random.RandomState(3).rand(4, *SMALL_INPUT).astype(np.float32)
    first, _ = layers.forward(SMALL_NET, params, x)
    second, _ = layers.forward(SMALL_NET, params, x)
    recorded, _ = layers.forward(SMALL_NET, params, x, record=True)
    self.assertEqual(first.dtype, np.float32)
    np.testing.assert_array_equal(first, second)
    np.testing.assert_array_equal(first, recorded)

  def test_batch_must_be_batched(self):
    with self.assertRaises(layers.ShapeError):
      layers.forward(SMALL_NET, small_params(), np.zeros(SMALL_INPUT[0]))


class BackwardTest(parameterized.TestCase):

  def test_requires_tape(self):
    _, tape = layers.forward(SMALL_NET, small_params(),
                             np.zeros((1,) + SMALL_INPUT))
    with self.assertRaises(layers.TapeError):
      layers.backward(tape, np.ones((1, 5)))

  def test_seed_shape_mismatch(self):
    _, tape = layers.forward(SMALL_NET, small_params(),
                             np.zeros((1,) + SMALL_INPUT), record=True)
    with self.assertRaises(layers.ShapeError):
      layers.backward(tape, np.ones((1, 4)))

  def test_cannot_differentiate_against_later_activation(self):
    _, tape = layers.forward(SMALL_NET, small_params(),
                             np.zeros((1,) + SMALL_INPUT), record=True)
    with self.assertRaises(ValueError):
      layers.backward(tape, np.ones((1, 3, 8, 8)), wrt=5, seed_at=0)

  @parameterized.parameters(
      dict(seed_at=layers.OUTPUT),
      dict(seed_at=2),
      dict(seed_at=5),
  )
  def test_input_gradient_matches_finite_differences(self, seed_at):
    random_state = np.random.RandomState(2)
    params = small_params()
    x = random_state.rand(1, *SMALL_INPUT)
    feature_layer = None if seed_at == layers.OUTPUT else seed_at

    def objective(inputs, weights):
      feature, output, _ = layers.forward_with_features(
          SMALL_NET, params, inputs, feature_layer)
      target = output if feature_layer is None else feature
      return np.sum(weights * target)

    feature, output, tape = layers.forward_with_features(
        SMALL_NET, params, x, feature_layer, record=True)
    target = output if feature_layer is None else feature
    weights = random_state.randn(*target.shape)
    grad = layers.backward(tape, weights, seed_at=seed_at)

    h = 1e-6
    sampled = random_state.choice(x.size, 40, replace=False)
    numeric = np.zeros(len(sampled))
    for n, index in enumerate(sampled):
      delta = np.zeros(x.size)
      delta[index] = h
      delta = delta.reshape(x.shape)
      numeric[n] = (objective(x + delta, weights) -
                    objective(x - delta, weights)) / (2 * h)
    self.assertLess(relative_error(grad.ravel()[sampled], numeric), 1e-5)

  def test_feature_gradient_matches_finite_differences(self):
    # d output / d activation of layer 2, by perturbing that activation
    random_state = np.random.RandomState(3)
    params = small_params()
    x = random_state.rand(1, *SMALL_INPUT)
    feature, output, tape = layers.forward_with_features(
        SMALL_NET, params, x, feature_layer=2, record=True)
    weights = np.zeros_like(output)
    weights[0, 1] = 1
    grad = layers.backward(tape, weights, wrt=2)
    self.assertEqual(grad.shape, feature.shape)

    def head(f):
      result, _ = layers.forward(SMALL_NET[3:], params[3:], f)
      return result[0, 1]

    h = 1e-6
    numeric = np.zeros(feature.size)
    for index in range(feature.size):
      delta = np.zeros(feature.size)
      delta[index] = h
      delta = delta.reshape(feature.shape)
      numeric[index] = (head(feature + delta) - head(feature - delta)) / (2 * h)
    self.assertLess(relative_error(grad.ravel(), numeric), 1e-5)

  def test_parameter_gradients_match_finite_differences(self):
    random_state = np.random.RandomState(4)
    params = small_params()
    x = random_state.rand(2, *SMALL_INPUT)
    output, tape = layers.forward(SMALL_NET, params, x, record=True)
    seed = random_state.randn(*output.shape)
    _, grads = layers.parameter_gradients(tape, seed)
    self.assertIsNone(grads[1])

    h = 1e-6
    for layer_index in [0, 3, 7]:
      for key in ['w', 'b']:
        values = params[layer_index][key]
        analytic = grads[layer_index][key]
        self.assertEqual(analytic.shape, values.shape)
        flat_sampled = random_state.choice(values.size, min(values.size, 10),
                                          replace=False)
        numeric = []
        for index in flat_sampled:
          original = values.flat[index]
          values.flat[index] = original + h
          plus = np.sum(seed * layers.forward(SMALL_NET, params, x)[0])
          values.flat[index] = original - h
          minus = np.sum(seed * layers.forward(SMALL_NET, params, x)[0])
          values.flat[index] = original
          numeric.append((plus - minus) / (2 * h))
        self.assertLess(
            relative_error(analytic.ravel()[flat_sampled], np.array(numeric)),
            1e-5, msg='layer {} {}'.format(layer_index, key))


if __name__ == '__main__':
  absltest.main()
