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
"""Install targeted-transfer."""
import setuptools


INSTALL_REQUIRES = [
    'absl-py',
    'apache-beam',
    'h5py',
    'numpy',
    'pandas',
    'pillow',
    'scipy',
    'xarray',
]

setuptools.setup(
    name='targeted-transfer',
    version='0.0.0',
    license='Apache 2.0',
    author='The Targeted Transfer Authors',
    install_requires=INSTALL_REQUIRES,
    packages=setuptools.find_packages(),
    entry_points={
        'console_scripts': [
            'targeted-transfer=targeted_transfer.scripts.cli:run',
        ],
    },
    python_requires='>=3.7')
