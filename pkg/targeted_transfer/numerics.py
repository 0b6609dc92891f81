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
"""Array functions shared by the attack and fine-tuning code."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import numpy as np
import scipy.ndimage
import scipy.stats


def gaussian_kernel(kernel_size: int, sigma: float) -> np.ndarray:
  """Normalized 2D Gaussian kernel with shape [kernel_size, kernel_size].

  Args:
    kernel_size: odd positive integer width of the kernel.
    sigma: standard deviation in pixels.

  Returns:
    float64 array summing to one.

  Raises:
    ValueError: if kernel_size is not odd and positive, or sigma <= 0.
  """
  if kernel_size < 1 or kernel_size % 2 == 0:
    raise ValueError('kernel_size must be odd and positive, got {}'
                     .format(kernel_size))
  if sigma <= 0:
    raise ValueError('sigma must be positive, got {}'.format(sigma))
  offsets = np.arange(kernel_size) - kernel_size // 2
  kern1d = scipy.stats.norm.pdf(offsets, scale=sigma)
  kernel_raw = np.outer(kern1d, kern1d)
  return kernel_raw / kernel_raw.sum()


def gaussian_blur(x: np.ndarray, kernel_size: int, sigma: float) -> np.ndarray:
  """Spatially smooth the last two axes of x with edge-replicate padding.

  Leading axes (channels, batch) are smoothed independently.

  Args:
    x: array with shape [..., height, width].
    kernel_size: odd positive integer width of the Gaussian kernel.
    sigma: standard deviation in pixels.

  Returns:
    Array with the same shape and dtype as x.
  """
  kernel = gaussian_kernel(kernel_size, sigma)
  x = np.asarray(x)
  if x.ndim < 2:
    raise ValueError('gaussian_blur needs at least 2 dimensions, got shape {}'
                     .format(x.shape))
  if kernel_size == 1:
    return x.copy()
  kernel = kernel.reshape((1,) * (x.ndim - 2) + kernel.shape)
  # accumulate in float64 so float32 constants survive unchanged
  smoothed = scipy.ndimage.correlate(
      x.astype(np.float64), kernel, mode='nearest')
  return smoothed.astype(x.dtype)


def linf_project(x: np.ndarray, center: np.ndarray,
                 epsilon: float) -> np.ndarray:
  """Project onto the intersection of an L-infinity ball and the [0, 1] box."""
  x = np.asarray(x)
  center = np.asarray(center)
  if x.shape != center.shape:
    raise ValueError('shapes do not match: {} vs {}'
                     .format(x.shape, center.shape))
  lower = np.maximum(center - epsilon, 0).astype(x.dtype)
  upper = np.minimum(center + epsilon, 1).astype(x.dtype)
  return np.clip(x, lower, upper)


def quantize(x: np.ndarray) -> np.ndarray:
  """Round [0, 1] values onto the 8-bit grid."""
  return (np.round(np.asarray(x) * 255) / 255).astype(np.asarray(x).dtype)
