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
"""Targeted transfer attacks with feature-space fine-tuning and averaging."""
from targeted_transfer import attacks
from targeted_transfer import data
from targeted_transfer import finetune
from targeted_transfer import harness
from targeted_transfer import landscape
from targeted_transfer import layers
from targeted_transfer import models
from targeted_transfer import numerics
from targeted_transfer import utils
