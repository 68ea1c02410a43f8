"""Hessian-guided vector quantization of dense weight matrices."""

from ._core import (
    HessianState,
    IoError,
    NumericalError,
    QuantConfig,
    QuantizedLayer,
    ValidationError,
    __version__,
    accumulate_hessian,
    bits_per_weight,
    build_hessian,
    dequantize,
    deserialize,
    finalize_hessian,
    load_layer,
    load_matrix,
    proxy_loss,
    quantize_matrix,
    quantize_rtn,
    save_layer,
    store_matrix,
    verify_lloyd,
    weighted_kmeans,
)

__all__ = [
    "HessianState",
    "IoError",
    "NumericalError",
    "QuantConfig",
    "QuantizedLayer",
    "ValidationError",
    "__version__",
    "accumulate_hessian",
    "bits_per_weight",
    "build_hessian",
    "dequantize",
    "deserialize",
    "finalize_hessian",
    "load_layer",
    "load_matrix",
    "proxy_loss",
    "quantize_matrix",
    "quantize_rtn",
    "save_layer",
    "store_matrix",
    "verify_lloyd",
    "weighted_kmeans",
]
