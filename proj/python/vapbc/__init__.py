# Copyright 2026 The vapbc Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Voice activity projection and backchannel prediction."""

from ._vapbc import (
    NUM_STATES,
    SAMPLE_RATE,
    Model,
    StreamSession,
    VapbcError,
    bin_marginal,
    decode_state,
    encode_state,
    flatten_intensity,
    frame_metrics,
    generate_corpus,
    generate_dialogue,
    log_mel,
    make_bc_labels,
    read_wav,
    sweep_threshold,
    zero_shot_bc_score,
)

__version__ = "0.1.0"

__all__ = [
    "NUM_STATES",
    "SAMPLE_RATE",
    "Model",
    "StreamSession",
    "VapbcError",
    "bin_marginal",
    "decode_state",
    "encode_state",
    "flatten_intensity",
    "frame_metrics",
    "generate_corpus",
    "generate_dialogue",
    "log_mel",
    "make_bc_labels",
    "read_wav",
    "sweep_threshold",
    "zero_shot_bc_score",
]
