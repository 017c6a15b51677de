"""Bit-accurate low-precision numeric formats and training cost models."""

from ._lpnum import (
    __version__,
    class_names,
    codepoints,
    context_scale_exponent,
    estimate_memory,
    estimate_time,
    normalize_format,
    preset_formats,
    preset_names,
    quantize,
    representable,
    run_conformance,
    storage_bits,
)

__all__ = [
    "__version__",
    "class_names",
    "codepoints",
    "context_scale_exponent",
    "estimate_memory",
    "estimate_time",
    "normalize_format",
    "preset_formats",
    "preset_names",
    "quantize",
    "representable",
    "run_conformance",
    "storage_bits",
]
