# Copyright 2026 The diagdistill Authors
# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the diagdistill core library."""

from ._core import (
    ConfigError,
    Error,
    FormatError,
    GaussianTrainer,
    NoiseSchedule,
    NumericError,
    Rng,
    decode_container,
    encode_container,
    extend_cyclically,
    generate,
    motion_amplitude,
    moving_dot_clip,
    nfe_count,
    run_gradcheck,
    simulate,
    timesteps_for,
)

__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "GaussianTrainer",
    "NoiseSchedule",
    "NumericError",
    "Rng",
    "decode_container",
    "encode_container",
    "extend_cyclically",
    "generate",
    "motion_amplitude",
    "moving_dot_clip",
    "nfe_count",
    "run_gradcheck",
    "simulate",
    "timesteps_for",
]
