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
"""Miscellaneous utility functions."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import contextlib
import hashlib
import json
import os
import shutil
import tempfile

import h5py
from typing import Any, Iterator


def makedirs(path: str) -> None:
  if path:
    os.makedirs(path, exist_ok=True)


@contextlib.contextmanager
def write_h5py(path: str) -> Iterator[h5py.File]:
  """Context manager to open an h5py.File for writing.

  The file is written to a temporary location and only moved into place once
  it has been closed, so readers never see a partial file.
  """
  tmp_dir = tempfile.mkdtemp()
  local_path = os.path.join(tmp_dir, 'data.h5')
  try:
    with h5py.File(local_path, 'w') as f:
      yield f
    makedirs(os.path.dirname(path))
    shutil.move(local_path, path)
  finally:
    shutil.rmtree(tmp_dir, ignore_errors=True)


@contextlib.contextmanager
def read_h5py(path: str) -> Iterator[h5py.File]:
  """Context manager to open an h5py.File for reading."""
  with h5py.File(path, 'r') as f:
    yield f


def write_json(obj: Any, path: str) -> None:
  makedirs(os.path.dirname(path))
  with open(path, 'w') as f:
    json.dump(obj, f, indent=2, sort_keys=True)
    f.write('\n')


def read_json(path: str) -> Any:
  with open(path) as f:
    return json.load(f)


def stable_hash(obj: Any, length: int = 16) -> str:
  """Hex digest of the canonical JSON encoding of obj."""
  encoded = json.dumps(obj, sort_keys=True, separators=(',', ':'))
  return hashlib.sha256(encoded.encode('utf-8')).hexdigest()[:length]


def derive_seed(global_seed: int, index: int, purpose: str = '') -> int:
  """Seed for one work item, independent of the order items are processed."""
  key = '{}:{}:{}'.format(global_seed, index, purpose).encode('utf-8')
  return int.from_bytes(hashlib.sha256(key).digest()[:4], 'little')

