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
"""Tests for numerics."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl.testing import absltest  # pylint: disable=g-bad-import-order
from absl.testing import parameterized
import numpy as np

from targeted_transfer import numerics  # pylint: disable=g-bad-import-order


class GaussianTest(parameterized.TestCase):

  def test_kernel_normalized_and_symmetric(self):
    kernel = numerics.gaussian_kernel(5, 1.5)
    self.assertEqual(kernel.shape, (5, 5))
    self.assertAlmostEqual(kernel.sum(), 1.0, places=12)
    np.testing.assert_allclose(kernel, kernel.T)
    np.testing.assert_allclose(kernel, kernel[::-1, ::-1])
    self.assertEqual(np.unravel_index(kernel.argmax(), kernel.shape), (2, 2))

  @parameterized.parameters(
      dict(kernel_size=4, sigma=1.0),
      dict(kernel_size=0, sigma=1.0),
      dict(kernel_size=-3, sigma=1.0),
      dict(kernel_size=3, sigma=0.0),
  )
  def test_kernel_invalid(self, kernel_size, sigma):
    with self.assertRaises(ValueError):
      numerics.gaussian_kernel(kernel_size, sigma)

  def test_blur_size_one_is_identity(self):
    x = np.random.RandomState(0).rand(3, 8, 8).astype(np.float32)
    np.testing.assert_array_equal(numerics.gaussian_blur(x, 1, 1.0), x)

  def test_blur_preserves_constants(self):
    x = np.full((3, 9, 9), 0.3, dtype=np.float32)
    result = numerics.gaussian_blur(x, 5, 1.5)
    self.assertEqual(result.dtype, np.float32)
    np.testing.assert_array_equal(result, x)

  def test_impulse_spreads_kernel(self):
    x = np.zeros((11, 11))
    x[5, 5] = 1.0
    result = numerics.gaussian_blur(x, 5, 1.5)
    np.testing.assert_allclose(result[3:8, 3:8],
                               numerics.gaussian_kernel(5, 1.5), atol=1e-15)
    self.assertEqual(result[0, 0], 0)

  def test_channels_are_independent(self):
    x = np.zeros((2, 7, 7))
    x[0, 3, 3] = 1.0
    result = numerics.gaussian_blur(x, 3, 1.0)
    np.testing.assert_array_equal(result[1], np.zeros((7, 7)))

  def test_blur_needs_two_dims(self):
    with self.assertRaises(ValueError):
      numerics.gaussian_blur(np.zeros(5), 3, 1.0)


class ProjectionTest(absltest.TestCase):

  def test_inside_is_unchanged(self):
    center = np.full((2, 2), 0.5, dtype=np.float32)
    x = center + np.float32(0.01)
    np.testing.assert_array_equal(numerics.linf_project(x, center, 0.05), x)

  def test_clips_to_ball_and_box(self):
    center = np.array([0.02, 0.5, 0.98])
    x = np.array([-1.0, 0.9, 2.0])
    result = numerics.linf_project(x, center, 0.1)
    np.testing.assert_allclose(result, [0.0, 0.6, 1.0])

  def test_worked_example(self):
    center = np.full(3, 0.5, dtype=np.float32)
    x = np.array([0.9, 0.1, 0.52], dtype=np.float32)
    result = numerics.linf_project(x, center, 16 / 255)
    np.testing.assert_allclose(result, [0.5 + 16 / 255, 0.5 - 16 / 255, 0.52],
                               rtol=0, atol=1e-7)

  def test_idempotent(self):
    random_state = np.random.RandomState(0)
    center = random_state.rand(3, 8, 8).astype(np.float32)
    x = center + random_state.uniform(-0.5, 0.5, size=center.shape).astype(
        np.float32)
    once = numerics.linf_project(x, center, 16 / 255)
    np.testing.assert_array_equal(
        numerics.linf_project(once, center, 16 / 255), once)
    self.assertLessEqual(np.max(np.abs(once - center)), 16 / 255 + 1e-7)
    self.assertGreaterEqual(once.min(), 0)
    self.assertLessEqual(once.max(), 1)

  def test_keeps_dtype(self):
    center = np.zeros(3, dtype=np.float32)
    result = numerics.linf_project(np.ones(3, dtype=np.float32), center,
                                   16 / 255)
    self.assertEqual(result.dtype, np.float32)
    self.assertTrue(np.all(result - center <= np.float32(16 / 255)))

  def test_shape_mismatch(self):
    with self.assertRaises(ValueError):
      numerics.linf_project(np.zeros(3), np.zeros(4), 0.1)

  def test_quantize(self):
    x = np.array([0.0, 0.5, 1.0, 0.2])
    np.testing.assert_allclose(numerics.quantize(x) * 255,
                               [0, 128, 255, 51], atol=1e-9)


if __name__ == '__main__':
  absltest.main()
