# Copyright (c) 2026, The sgda3d Authors
# SPDX-License-Identifier: Apache-2.0

from ._core import (
    ConfigError,
    DataError,
    DimensionError,
    Error,
    NumericError,
    ParseError,
    SgdaModule,
    UsageError,
    extract_patch,
    froc,
    gradcheck_suite,
    parameter_count,
    read_mhd,
    resample_isotropic,
    window,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "Error",
    "NumericError",
    "ParseError",
    "SgdaModule",
    "UsageError",
    "extract_patch",
    "froc",
    "gradcheck_suite",
    "parameter_count",
    "read_mhd",
    "resample_isotropic",
    "window",
]
