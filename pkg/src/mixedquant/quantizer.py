"""Per-layer weight normalization and tensor quantization.

Weights are normalized per layer so the largest magnitude is exactly 1, the
normalized values are encoded in the requested weight format, and the scale
is carried alongside the codes so the dequantized tensor reads
``decode(code) * scale``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formats import (
    NEAREST,
    RoundingMode,
    WeightFormat,
    decode_array,
    quantize_array,
)

__all__ = ["QTensor", "normalize_layer", "quantize_tensor", "dequantize"]


@dataclass(frozen=True)
class QTensor:
    """Quantized tensor: integer codes, the format, and the layer scale."""

    codes: np.ndarray
    fmt: WeightFormat
    scale: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.codes.shape

    def zero_fraction(self) -> float:
        return float(np.mean(decode_array(self.codes, self.fmt) == 0.0))


def normalize_layer(w: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale a weight tensor so max |w| == 1; returns (normalized, scale).

    An all-zero or non-finite tensor has no usable scale and is an error.
    """
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("weight tensor must be finite")
    scale = float(np.max(np.abs(w)))
    if scale == 0.0:
        raise ValueError("cannot normalize an all-zero weight tensor")
    return w / scale, scale


def quantize_tensor(
    w: np.ndarray,
    fmt: WeightFormat,
    mode: RoundingMode = NEAREST,
    rng: np.random.Generator | None = None,
) -> QTensor:
    """Normalize a layer and encode every element in ``fmt``."""
    normalized, scale = normalize_layer(w)
    codes = quantize_array(normalized, fmt, mode, rng)
    return QTensor(codes=codes, fmt=fmt, scale=scale)


def dequantize(q: QTensor) -> np.ndarray:
    """Reconstruct real weights: ``decode(codes) * scale``."""
    return decode_array(q.codes, q.fmt) * q.scale
