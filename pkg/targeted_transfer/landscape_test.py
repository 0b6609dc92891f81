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
"""Tests for landscape."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl.testing import absltest  # pylint: disable=g-bad-import-order
from absl.testing import parameterized
import numpy as np
import xarray

# pylint: disable=g-bad-import-order
from targeted_transfer import landscape
from targeted_transfer import layers
from targeted_transfer import models
from targeted_transfer import numerics

TINY_CNN = models.ModelArch(
    name='tiny',
    input_shape=(3, 16, 16),
    layers=(layers.conv2d(3, 4), layers.relu(),
            layers.maxpool2d(2),
            layers.conv2d(4, 4), layers.relu(),
            layers.avgpool2d(2),
            layers.flatten(),
            layers.dense(10)),
    tap_layer=2)


def random_model(seed):
  params = layers.init_params(TINY_CNN.layers, TINY_CNN.input_shape,
                              np.random.RandomState(seed))
  return models.TrainedModel(TINY_CNN, params, seed)


def anchors(seed=0, epsilon=16 / 255):
  random_state = np.random.RandomState(seed)
  clean = random_state.uniform(0.2, 0.8, size=(3, 16, 16)).astype(np.float32)

  def perturbed():
    delta = random_state.uniform(-epsilon, epsilon, size=clean.shape)
    return np.clip(clean + delta, 0, 1).astype(np.float32)

  return clean, perturbed(), perturbed(), perturbed()


class LogitPlaneTest(parameterized.TestCase):

  def setUp(self):
    super(LogitPlaneTest, self).setUp()
    self.ensemble = [random_model(1), random_model(2)]
    self.clean, self.ae, self.ae_fft, self.ae_aaf = anchors()
    self.plane = landscape.logit_plane(self.ae, self.ae_fft, self.ae_aaf,
                                       self.ensemble, y_t=3, grid=7)

  def test_frame(self):
    u = self.plane.u_direction
    v = self.plane.v_direction
    self.assertAlmostEqual(np.linalg.norm(u), 1.0, places=10)
    self.assertAlmostEqual(np.linalg.norm(v), 1.0, places=10)
    self.assertAlmostEqual(np.sum(u * v), 0.0, places=10)
    self.assertEqual(self.plane.anchors['ae'], (0.0, 0.0))
    self.assertEqual(self.plane.anchors['fft'][1], 0.0)
    self.assertGreater(self.plane.anchors['fft'][0], 0.0)
    self.assertGreater(self.plane.anchors['aaf'][1], 0.0)

  @parameterized.parameters('ae', 'fft', 'aaf')
  def test_anchor_values(self, name):
    image = {'ae': self.ae, 'fft': self.ae_fft, 'aaf': self.ae_aaf}[name]
    np.testing.assert_allclose(
        self.plane.value_at(name),
        landscape.ensemble_logit(self.ensemble, image, 3), atol=1e-4)
    u, v = self.plane.anchors[name]
    np.testing.assert_allclose(self.plane.point(u, v), image, atol=1e-6)

  def test_lattice(self):
    values = self.plane.values
    self.assertIsInstance(values, xarray.DataArray)
    self.assertEqual(values.dims, ('v', 'u'))
    # seven uniform points plus the anchor coordinates not already on them
    self.assertBetween(values.sizes['u'], 7, 10)
    self.assertBetween(values.sizes['v'], 7, 9)
    self.assertTrue(np.isfinite(values.values).all())
    for name in landscape.ANCHOR_NAMES:
      u, v = self.plane.anchors[name]
      self.assertIn(u, values['u'].values)
      self.assertIn(v, values['v'].values)

  def test_single_model(self):
    model = self.ensemble[0]
    plane = landscape.logit_plane(self.ae, self.ae_fft, self.ae_aaf, [model],
                                  y_t=3, grid=5)
    u = float(plane.values['u'][1])
    v = float(plane.values['v'][3])
    image = plane.point(u, v).astype(np.float32)
    np.testing.assert_allclose(float(plane.values.sel(u=u, v=v)),
                               models.predict(model, image)[0][3],
                               rtol=1e-5, atol=1e-5)

  def test_deterministic(self):
    again = landscape.logit_plane(self.ae, self.ae_fft, self.ae_aaf,
                                  self.ensemble, y_t=3, grid=7)
    xarray.testing.assert_equal(self.plane.values, again.values)

  def test_csv_and_anchors(self):
    lines = self.plane.to_csv().decode().splitlines()
    self.assertEqual(lines[0], 'x,y,value')
    self.assertLen(lines, 1 + self.plane.values.size)
    summary = self.plane.anchors_json()
    self.assertEqual(sorted(summary['anchors']), ['aaf', 'ae', 'fft'])
    self.assertEqual(summary['y_t'], 3)
    self.assertFalse(summary['boxed'])
    self.assertEqual(summary['grid_shape'], list(self.plane.values.shape))

  def test_boxed(self):
    epsilon = 16 / 255
    plane = landscape.logit_plane(self.ae, self.ae_fft, self.ae_aaf,
                                  self.ensemble, y_t=3, grid=7,
                                  clean=self.clean, epsilon=epsilon)
    self.assertTrue(plane.boxed)
    self.assertEqual(plane.values.shape, self.plane.values.shape)
    # anchors already lie in the ball, so boxing leaves them unchanged
    np.testing.assert_allclose(plane.value_at('ae'), self.plane.value_at('ae'),
                               atol=1e-5)
    corner = plane.point(float(plane.values['u'][0]),
                         float(plane.values['v'][-1])).astype(np.float32)
    boxed = numerics.linf_project(corner, self.clean, epsilon)
    np.testing.assert_allclose(
        float(plane.values[-1, 0]),
        landscape.ensemble_logit(self.ensemble, boxed, 3), atol=1e-4)


class DegenerateTest(absltest.TestCase):

  def setUp(self):
    super(DegenerateTest, self).setUp()
    self.ensemble = [random_model(1)]
    _, self.ae, self.ae_fft, _ = anchors()

  def test_coincident(self):
    with self.assertRaises(landscape.DegenerateSubspaceError):
      landscape.logit_plane(self.ae, self.ae.copy(), self.ae_fft,
                            self.ensemble, 0)

  def test_collinear(self):
    ae = self.ae.astype(np.float64)
    ae_fft = self.ae_fft.astype(np.float64)
    with self.assertRaises(landscape.DegenerateSubspaceError):
      landscape.logit_plane(ae, ae_fft, 2 * ae_fft - ae, self.ensemble, 0)

  def test_invalid_arguments(self):
    with self.assertRaises(ValueError):
      landscape.logit_plane(self.ae, self.ae_fft, self.ae, [], 0)
    with self.assertRaises(ValueError):
      landscape.logit_plane(self.ae, self.ae_fft, self.ae_fft[:2],
                            self.ensemble, 0)
    with self.assertRaises(ValueError):
      landscape.logit_plane(self.ae, self.ae_fft, self.ae, self.ensemble, 0,
                            epsilon=0.1)


if __name__ == '__main__':
  absltest.main()
