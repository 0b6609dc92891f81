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
"""Ensemble target logit over the plane through three adversarial examples."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import io

import numpy as np
import pandas as pd
from typing import Any, Dict, Optional, Sequence, Tuple
import xarray

# pylint: disable=g-bad-import-order
from targeted_transfer import models
from targeted_transfer import numerics


ANCHOR_NAMES = ('ae', 'fft', 'aaf')


class DegenerateSubspaceError(ValueError):
  """Raised when the anchors do not span a plane."""


class LogitPlane(object):
  """Mean target logit on a lattice in an affine plane of image space.

  Attributes:
    values: xarray.DataArray with dimensions (v, u) holding the ensemble-mean
      logit of class y_t at origin + u * u_direction + v * v_direction.
    origin: the anchor at coordinate (0, 0).
    u_direction: unit vector towards the fft anchor.
    v_direction: unit vector orthogonal to u_direction in the anchors' plane.
    anchors: coordinates (u, v) of each anchor by name.
    y_t: target class.
  """

  def __init__(self, values: xarray.DataArray, origin: np.ndarray,
               u_direction: np.ndarray, v_direction: np.ndarray,
               anchors: Dict[str, Tuple[float, float]], y_t: int,
               boxed: bool = False):
    self.values = values
    self.origin = origin
    self.u_direction = u_direction
    self.v_direction = v_direction
    self.anchors = anchors
    self.y_t = y_t
    self.boxed = boxed

  def point(self, u: float, v: float) -> np.ndarray:
    return self.origin + u * self.u_direction + v * self.v_direction

  def value_at(self, name: str) -> float:
    u, v = self.anchors[name]
    return float(self.values.sel(u=u, v=v))

  def to_frame(self) -> pd.DataFrame:
    frame = self.values.to_dataframe(name='value').reset_index()
    frame = frame.rename(columns={'u': 'x', 'v': 'y'})
    return frame[['x', 'y', 'value']]

  def to_csv(self) -> bytes:
    buffer = io.StringIO()
    self.to_frame().to_csv(buffer, index=False)
    return buffer.getvalue().encode('utf-8')

  def anchors_json(self) -> Dict[str, Any]:
    return {
        'anchors': {
            name: list(coords) for name, coords in self.anchors.items()},
        'y_t': self.y_t,
        'boxed': self.boxed,
        'grid_shape': list(self.values.shape),
    }


def _anchor_coordinates(ae: np.ndarray, ae_fft: np.ndarray,
                        ae_aaf: np.ndarray):
  """Orthonormal directions and the anchors' coordinates, in float64."""
  origin = ae.astype(np.float64)
  u_raw = ae_fft.astype(np.float64) - origin
  u_norm = np.linalg.norm(u_raw)
  if u_norm == 0:
    raise DegenerateSubspaceError('fft anchor coincides with the baseline')
  u_direction = u_raw / u_norm
  offset = ae_aaf.astype(np.float64) - origin
  along = float(np.sum(offset * u_direction))
  v_raw = offset - along * u_direction
  v_norm = np.linalg.norm(v_raw)
  if v_norm <= 1e-12 * max(np.linalg.norm(offset), 1.0):
    raise DegenerateSubspaceError('anchors are collinear')
  v_direction = v_raw / v_norm
  anchors = {'ae': (0.0, 0.0), 'fft': (float(u_norm), 0.0),
             'aaf': (along, float(v_norm))}
  return origin, u_direction, v_direction, anchors


def _axis(coords: Sequence[float], grid: int, margin: float) -> np.ndarray:
  low, high = min(coords), max(coords)
  pad = margin * (high - low)
  lattice = np.linspace(low - pad, high + pad, grid)
  return np.union1d(lattice, np.asarray(coords, dtype=np.float64))


def logit_plane(ae: np.ndarray,
                ae_fft: np.ndarray,
                ae_aaf: np.ndarray,
                ensemble: Sequence[models.TrainedModel],
                y_t: int,
                grid: int = 41,
                margin: float = 0.2,
                clean: Optional[np.ndarray] = None,
                epsilon: Optional[float] = None) -> LogitPlane:
  """Sample the ensemble-mean target logit over the anchors' plane.

  The baseline example ae is the origin and the fft example lies on the u
  axis. The lattice covers the anchors' bounding box plus `margin` of its
  extent on every side, and includes the anchor coordinates themselves.
  Points are evaluated as they are unless clean and epsilon are given, in
  which case each is first projected into the epsilon ball and pixel box.

  Args:
    ae: baseline adversarial example.
    ae_fft: fine-tuned example.
    ae_aaf: averaged example.
    ensemble: models whose target logits are averaged.
    y_t: target class.
    grid: number of uniform lattice points along each axis.
    margin: fraction of the anchor extent added on each side.
    clean: clean image, for boxed evaluation.
    epsilon: L-infinity budget, for boxed evaluation.

  Returns:
    LogitPlane.

  Raises:
    DegenerateSubspaceError: if the anchors do not span a plane.
  """
  if not ensemble:
    raise ValueError('ensemble must contain at least one model')
  if not ae.shape == ae_fft.shape == ae_aaf.shape:
    raise ValueError('anchor shapes differ: {}, {}, {}'
                     .format(ae.shape, ae_fft.shape, ae_aaf.shape))
  if (clean is None) != (epsilon is None):
    raise ValueError('boxed evaluation needs both clean and epsilon')
  if grid < 2:
    raise ValueError('grid must be at least 2, got {}'.format(grid))

  origin, u_direction, v_direction, anchors = _anchor_coordinates(
      ae, ae_fft, ae_aaf)
  us = _axis([c[0] for c in anchors.values()], grid, margin)
  vs = _axis([c[1] for c in anchors.values()], grid, margin)

  dtype = ae.dtype
  values = np.zeros((vs.size, us.size))
  for i, v in enumerate(vs):
    points = (origin + v * v_direction +
              us[:, np.newaxis, np.newaxis, np.newaxis] * u_direction)
    points = points.astype(dtype)
    if clean is not None:
      points = numerics.linf_project(
          points, np.broadcast_to(clean, points.shape), epsilon)
    logits = np.mean([model.logits(points)[:, y_t] for model in ensemble],
                     axis=0)
    values[i] = logits

  array = xarray.DataArray(values, dims=('v', 'u'),
                           coords={'v': vs, 'u': us}, name='logit')
  return LogitPlane(array, origin, u_direction, v_direction, anchors, y_t,
                    boxed=clean is not None)


def ensemble_logit(ensemble: Sequence[models.TrainedModel], image: np.ndarray,
                   y_t: int) -> float:
  """Mean target logit of the ensemble at a single image."""
  return float(np.mean([models.predict(m, image)[0][y_t] for m in ensemble]))
