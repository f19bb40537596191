"""Continuous-emotion speech synthesis: Python bindings over the C++ core."""

from ._core import (
    EMOTIONS,
    PRESETS,
    ConfigError,
    Error,
    FormatError,
    Model,
    NumericError,
    Service,
    ShapeError,
    StageError,
    ValueError,
    confidence_interval,
    count_parameters,
    count_projection_matrices,
    dtw_align,
    generate_synthetic_corpus,
    griffin_lim,
    mel_filterbank,
    read_wav,
    sd,
    sdr,
    sign_compatibility,
    stft_magnitude,
    write_wav,
)

__all__ = [
    "EMOTIONS",
    "PRESETS",
    "ConfigError",
    "Error",
    "FormatError",
    "Model",
    "NumericError",
    "Service",
    "ShapeError",
    "StageError",
    "ValueError",
    "confidence_interval",
    "count_parameters",
    "count_projection_matrices",
    "dtw_align",
    "generate_synthetic_corpus",
    "griffin_lim",
    "mel_filterbank",
    "read_wav",
    "sd",
    "sdr",
    "sign_compatibility",
    "stft_magnitude",
    "write_wav",
]
