"""Bit-exact emulation of CNN inference with minifloat weights and
fixed-point activations, plus the analysis tooling around it."""

from .analysis import (
    PUBLISHED_ACCURACY,
    PUBLISHED_NETWORK_ACCURACY,
    StorageReport,
    SweepRecord,
    SweepReport,
    exponent_histogram,
    exponent_range_grid,
    fixed_point_grid,
    storage_report,
    sweep,
    zero_fraction,
)
from .engine import (
    LayerSpec,
    Model,
    Quantized,
    REFERENCE,
    avgpool,
    calibrate_activation_formats,
    conv2d,
    evaluate,
    evaluate_detailed,
    flatten,
    forward,
    fully_connected,
    maxpool,
    normalized_accuracy,
    relu,
)
from .formats import (
    FixedFormat,
    FormatError,
    MiniFloatFormat,
    NEAREST,
    RoundingMode,
    WeightFormat,
    decode,
    decode_array,
    enumerate_codes,
    enumerate_values,
    format_from_mantissa_exponent,
    format_width_bits,
    parse_format,
    quantize_array,
    quantize_value,
    stochastic,
)
from .mac import (
    AccValue,
    MacConfig,
    accumulate,
    dot_product,
    mixed_multiply,
    requantize,
    required_acc_bits,
)
from .model_io import (
    BadMagicError,
    BlobSizeError,
    FixtureSpec,
    LabeledSet,
    MissingBlobError,
    ModelIOError,
    UnknownLayerKindError,
    generate_fixture,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    verify_checksums,
    write_checksums,
)
from .quantizer import QTensor, dequantize, normalize_layer, quantize_tensor

__version__ = "0.1.0"

__all__ = [
    "AccValue",
    "BadMagicError",
    "BlobSizeError",
    "FixedFormat",
    "FixtureSpec",
    "FormatError",
    "LabeledSet",
    "LayerSpec",
    "MacConfig",
    "MiniFloatFormat",
    "MissingBlobError",
    "Model",
    "ModelIOError",
    "NEAREST",
    "PUBLISHED_ACCURACY",
    "PUBLISHED_NETWORK_ACCURACY",
    "QTensor",
    "Quantized",
    "REFERENCE",
    "RoundingMode",
    "StorageReport",
    "SweepRecord",
    "SweepReport",
    "UnknownLayerKindError",
    "WeightFormat",
    "accumulate",
    "avgpool",
    "calibrate_activation_formats",
    "conv2d",
    "decode",
    "decode_array",
    "dequantize",
    "dot_product",
    "enumerate_codes",
    "enumerate_values",
    "evaluate",
    "evaluate_detailed",
    "exponent_histogram",
    "exponent_range_grid",
    "fixed_point_grid",
    "flatten",
    "format_from_mantissa_exponent",
    "format_width_bits",
    "forward",
    "fully_connected",
    "generate_fixture",
    "load_dataset",
    "load_model",
    "maxpool",
    "mixed_multiply",
    "normalize_layer",
    "normalized_accuracy",
    "parse_format",
    "quantize_array",
    "quantize_tensor",
    "quantize_value",
    "relu",
    "requantize",
    "required_acc_bits",
    "save_dataset",
    "save_model",
    "storage_report",
    "stochastic",
    "sweep",
    "verify_checksums",
    "write_checksums",
    "zero_fraction",
]
