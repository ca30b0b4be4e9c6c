"""Desk-scale CNN inference in two modes: double-precision and quantized.

Reference mode runs float64 end to end. Quantized mode emulates the
datapath bit-exactly: activations are fixed-point codes requantized at
every layer boundary, weights are per-layer normalized codes, and conv/fc
inner products are integer dot products at the accumulator scale. The
vectorized integer path is the same arithmetic as ``mac.dot_product``;
exactness is guaranteed up front by sizing accumulators from the
worst-case fan-in bound, so summation order cannot matter.

Activation formats come from a calibration pass: the fraction width is
``(bits - 1) - ceil(log2(max |activation|))``, clamped to the legal range,
with the maximum taken over a calibration batch in reference mode. Biases
stay in full precision and are added between accumulator decode and
requantization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .formats import (
    NEAREST,
    FixedFormat,
    RoundingMode,
    WeightFormat,
    quantize_fixed_array,
)
from .quantizer import QTensor, quantize_tensor

__all__ = [
    "LayerSpec",
    "Model",
    "conv2d",
    "fully_connected",
    "relu",
    "maxpool",
    "avgpool",
    "flatten",
    "ReferenceMode",
    "REFERENCE",
    "Quantized",
    "EvalMode",
    "forward",
    "evaluate",
    "evaluate_detailed",
    "normalized_accuracy",
    "calibrate_activation_formats",
]

_WEIGHTED = ("conv2d", "fc")


@dataclass
class LayerSpec:
    """One layer of the network; only conv2d/fc carry parameters."""

    kind: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    pad: int = 0
    window: int = 2

    def describe(self) -> str:
        return self.kind


def _as_f64(x: np.ndarray | None) -> np.ndarray | None:
    return None if x is None else np.asarray(x, dtype=np.float64)


def conv2d(
    weights: np.ndarray, bias: np.ndarray | None = None, stride: int = 1, pad: int = 0
) -> LayerSpec:
    """2-D convolution; weights shaped (out_channels, in_channels, kh, kw)."""
    return LayerSpec("conv2d", _as_f64(weights), _as_f64(bias), stride=stride, pad=pad)


def fully_connected(weights: np.ndarray, bias: np.ndarray | None = None) -> LayerSpec:
    """Dense layer; weights shaped (out_features, in_features)."""
    return LayerSpec("fc", _as_f64(weights), _as_f64(bias))


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(window: int = 2, stride: int | None = None) -> LayerSpec:
    return LayerSpec("maxpool", window=window, stride=window if stride is None else stride)


def avgpool(window: int = 2, stride: int | None = None) -> LayerSpec:
    return LayerSpec("avgpool", window=window, stride=window if stride is None else stride)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


@dataclass
class Model:
    """Layer stack plus the input shape, usually (C, H, W); validated on build."""

    layers: list[LayerSpec]
    input_shape: tuple[int, ...]

    def __post_init__(self) -> None:
        self.layers = list(self.layers)
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self._shapes = self._infer_shapes()
        if not any(layer.kind in _WEIGHTED for layer in self.layers):
            raise ValueError("model needs at least one conv2d or fc layer")

    def _fail(self, idx: int, msg: str) -> ValueError:
        kind = self.layers[idx].kind
        return ValueError(f"layer {idx} ({kind}): {msg}")

    def _infer_shapes(self) -> list[tuple[int, ...]]:
        """Output shape after each layer; raises naming the offending layer."""
        shape: tuple[int, ...] = self.input_shape
        shapes: list[tuple[int, ...]] = []
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv2d":
                if layer.weights is None or layer.weights.ndim != 4:
                    raise self._fail(i, "needs 4-d weights (out, in, kh, kw)")
                if len(shape) != 3:
                    raise self._fail(i, f"expects (C, H, W) input, got {shape}")
                out_c, in_c, kh, kw = layer.weights.shape
                c, h, w = shape
                if in_c != c:
                    raise self._fail(i, f"weight in_channels {in_c} != input channels {c}")
                oh = (h + 2 * layer.pad - kh) // layer.stride + 1
                ow = (w + 2 * layer.pad - kw) // layer.stride + 1
                if oh < 1 or ow < 1:
                    raise self._fail(i, "kernel larger than padded input")
                if layer.bias is not None and layer.bias.shape != (out_c,):
                    raise self._fail(i, "bias shape must be (out_channels,)")
                shape = (out_c, oh, ow)
            elif layer.kind == "fc":
                if layer.weights is None or layer.weights.ndim != 2:
                    raise self._fail(i, "needs 2-d weights (out, in)")
                if len(shape) != 1:
                    raise self._fail(i, f"expects flattened input, got {shape}")
                out_f, in_f = layer.weights.shape
                if in_f != shape[0]:
                    raise self._fail(i, f"weight in_features {in_f} != input size {shape[0]}")
                if layer.bias is not None and layer.bias.shape != (out_f,):
                    raise self._fail(i, "bias shape must be (out_features,)")
                shape = (out_f,)
            elif layer.kind in ("maxpool", "avgpool"):
                if len(shape) != 3:
                    raise self._fail(i, f"expects (C, H, W) input, got {shape}")
                c, h, w = shape
                oh = (h - layer.window) // layer.stride + 1
                ow = (w - layer.window) // layer.stride + 1
                if oh < 1 or ow < 1:
                    raise self._fail(i, "pool window larger than input")
                shape = (c, oh, ow)
            elif layer.kind == "relu":
                pass
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            else:
                raise self._fail(i, "unknown layer kind")
            shapes.append(shape)
        return shapes

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self._shapes[-1]

    def weighted_layers(self) -> list[tuple[int, LayerSpec]]:
        return [(i, l) for i, l in enumerate(self.layers) if l.kind in _WEIGHTED]


# ── evaluation modes ─────────────────────────────────────────────────────────


class ReferenceMode:
    """Double-precision mode; no quantization anywhere."""

    def __repr__(self) -> str:  # pragma: no cover
        return "Reference"


REFERENCE = ReferenceMode()


@dataclass(frozen=True)
class Quantized:
    """Quantized-mode parameters.

    ``acc_bits=None`` sizes each layer's accumulator from the worst-case
    fan-in bound (always exact); a concrete value is enforced against that
    bound instead, so a too-small accumulator is a configuration error
    rather than a silent divergence from the scalar datapath.
    ``act_formats``, when given, pins the per-boundary activation formats:
    entry 0 is the model input, entry i+1 the output of layer i (None
    inherits the previous boundary).
    """

    w_fmt: WeightFormat
    act_bits: int = 16
    rounding: RoundingMode = NEAREST
    acc_bits: int | None = None
    act_formats: tuple[FixedFormat | None, ...] | None = None


EvalMode = ReferenceMode | Quantized


def _rng_for(mode: RoundingMode, kind: int, index: int) -> np.random.Generator | None:
    if not mode.is_stochastic:
        return None
    return np.random.default_rng(np.random.SeedSequence([mode.seed, kind, index]))


# ── reference path ───────────────────────────────────────────────────────────


def _im2col(
    x: np.ndarray, kh: int, kw: int, stride: int, pad: int
) -> tuple[np.ndarray, int, int]:
    """(N, C, H, W) -> (N, positions, C*kh*kw), zero padded."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, c * kh * kw)
    return cols, oh, ow


def _pool_windows(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    return win.reshape(*win.shape[:4], window * window)


def _reference_layer(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    if layer.kind == "conv2d":
        out_c, _, kh, kw = layer.weights.shape
        cols, oh, ow = _im2col(x, kh, kw, layer.stride, layer.pad)
        y = cols @ layer.weights.reshape(out_c, -1).T
        if layer.bias is not None:
            y = y + layer.bias
        return y.transpose(0, 2, 1).reshape(x.shape[0], out_c, oh, ow)
    if layer.kind == "fc":
        y = x @ layer.weights.T
        if layer.bias is not None:
            y = y + layer.bias
        return y
    if layer.kind == "relu":
        return np.maximum(x, 0.0)
    if layer.kind == "maxpool":
        return _pool_windows(x, layer.window, layer.stride).max(axis=-1)
    if layer.kind == "avgpool":
        return _pool_windows(x, layer.window, layer.stride).mean(axis=-1)
    return x.reshape(x.shape[0], -1)  # flatten


def _reference_forward(model: Model, x: np.ndarray, record: list | None = None) -> np.ndarray:
    for layer in model.layers:
        x = _reference_layer(layer, x)
        if record is not None:
            record.append(float(np.max(np.abs(x))) if x.size else 0.0)
    return x


# ── activation calibration ───────────────────────────────────────────────────


def _ceil_log2(x: float) -> int:
    mant, exp = math.frexp(x)
    return exp - 1 if mant == 0.5 else exp


def _fmt_for_max(max_abs: float, bits: int) -> FixedFormat:
    frac = bits - 1 if max_abs == 0.0 else (bits - 1) - _ceil_log2(max_abs)
    return FixedFormat(bits, min(max(frac, 0), bits - 1))


def calibrate_activation_formats(
    model: Model, inputs: np.ndarray, act_bits: int = 16
) -> tuple[FixedFormat | None, ...]:
    """Per-boundary activation formats from a reference pass over ``inputs``.

    Returns one entry per boundary: index 0 is the model input, index i+1
    the output of layer i. Layers that reuse the incoming scale (relu,
    pools, flatten) get None.
    """
    maxima: list[float] = []
    _reference_forward(model, inputs, record=maxima)
    fmts: list[FixedFormat | None] = [
        _fmt_for_max(float(np.max(np.abs(inputs))), act_bits)
    ]
    for layer, mx in zip(model.layers, maxima):
        fmts.append(_fmt_for_max(mx, act_bits) if layer.kind in _WEIGHTED else None)
    return tuple(fmts)


# ── quantized path ───────────────────────────────────────────────────────────

_INT64_EXACT_BITS = 52  # int64 sums also decode exactly as float64 below this


@dataclass
class _PlannedLayer:
    w_int: np.ndarray  # (out, fan_in) integer weights at scale 2**-(acc_frac - F_in)
    acc_frac: int
    scale: float
    bias: np.ndarray | None
    qtensor: QTensor


@dataclass
class _Plan:
    boundary_fmts: list[FixedFormat]  # resolved, one per boundary
    planned: dict[int, _PlannedLayer]
    saturation_count: int = 0


def _decompose_codes(q: QTensor) -> tuple[np.ndarray, int]:
    """Signed integer weights and the power-of-two fraction they carry.

    Returns (w_int, w_frac) with dequantized-normalized value
    ``w_int * 2**-w_frac`` exactly.
    """
    fmt = q.fmt
    codes = q.codes.reshape(q.codes.shape[0], -1)
    if isinstance(fmt, FixedFormat):
        return codes.astype(object), fmt.frac_bits
    m, e = fmt.mantissa_bits, fmt.exponent_bits
    frac = codes & ((1 << m) - 1)
    fld = (codes >> m) & ((1 << e) - 1)
    sign = codes >> (m + e)
    exp = fld + fmt.e_min
    if fmt.implicit_bit:
        sig = (1 << m) + frac
        nonzero = ~((fld == 0) & (frac == 0))
    else:
        sig = frac
        nonzero = frac != 0
    if not np.any(nonzero):
        return np.zeros(codes.shape, dtype=object), 0
    min_e = int(exp[nonzero].min())
    shift = (exp - min_e).astype(object)
    w_int = np.where(nonzero, sig.astype(object) * (2**shift), 0)
    w_int = np.where(sign == 1, -w_int, w_int)
    return w_int, m - min_e


def _plan_layer(
    idx: int,
    layer: LayerSpec,
    in_fmt: FixedFormat,
    q: Quantized,
    fan_in: int,
) -> _PlannedLayer:
    rng = _rng_for(q.rounding, 0, idx)
    qt = quantize_tensor(layer.weights, q.w_fmt, q.rounding, rng)
    w_int, w_frac = _decompose_codes(qt)
    acc_frac = in_fmt.frac_bits + w_frac
    a_max = 1 << (in_fmt.total_bits - 1)
    w_max = max(int(np.max(np.abs(w_int))), 1)
    bound_bits = (fan_in * a_max * w_max).bit_length() + 1
    if q.acc_bits is not None and bound_bits > q.acc_bits:
        raise ValueError(
            f"layer {idx} ({layer.kind}): worst-case accumulator needs "
            f"{bound_bits} bits, configured acc_bits={q.acc_bits}"
        )
    if bound_bits <= _INT64_EXACT_BITS:
        w_int = w_int.astype(np.int64)
    return _PlannedLayer(w_int, acc_frac, qt.scale, layer.bias, qt)


def _prepare(model: Model, calib_inputs: np.ndarray, q: Quantized) -> _Plan:
    if q.act_formats is not None:
        raw = list(q.act_formats)
        if len(raw) != len(model.layers) + 1:
            raise ValueError("act_formats needs one entry per boundary")
    else:
        raw = list(calibrate_activation_formats(model, calib_inputs, q.act_bits))
    resolved: list[FixedFormat] = []
    cur = raw[0]
    if cur is None:
        raise ValueError("input boundary format cannot be None")
    for entry in raw:
        cur = entry if entry is not None else cur
        resolved.append(cur)

    planned: dict[int, _PlannedLayer] = {}
    for idx, layer in model.weighted_layers():
        in_fmt = resolved[idx]  # boundary feeding layer idx
        if layer.kind == "conv2d":
            fan_in = int(np.prod(layer.weights.shape[1:]))
        else:
            fan_in = layer.weights.shape[1]
        planned[idx] = _plan_layer(idx, layer, in_fmt, q, fan_in)
    return _Plan(boundary_fmts=resolved, planned=planned)


def _requantize_batch(
    y: np.ndarray,
    fmt: FixedFormat,
    mode: RoundingMode,
    boundary: int,
    plan: _Plan,
) -> np.ndarray:
    plan.saturation_count += int(np.sum(y > fmt.max_value) + np.sum(y < fmt.min_value))
    return quantize_fixed_array(y, fmt, mode, _rng_for(mode, 1, boundary))


def _quantized_forward(model: Model, x: np.ndarray, q: Quantized, plan: _Plan) -> np.ndarray:
    cur_fmt = plan.boundary_fmts[0]
    codes = _requantize_batch(x, cur_fmt, q.rounding, 0, plan)
    for idx, layer in enumerate(model.layers):
        out_fmt = plan.boundary_fmts[idx + 1]
        if layer.kind in _WEIGHTED:
            pl = plan.planned[idx]
            if layer.kind == "conv2d":
                out_c, _, kh, kw = layer.weights.shape
                cols, oh, ow = _im2col(codes, kh, kw, layer.stride, layer.pad)
                # np.dot instead of matmul: the wide-accumulator fallback uses
                # object dtype (Python ints), which matmul refuses
                acc = np.dot(cols, pl.w_int.T)  # exact integer sums
                y = acc.astype(np.float64) * math.ldexp(pl.scale, -pl.acc_frac)
                if pl.bias is not None:
                    y = y + pl.bias
                y = y.transpose(0, 2, 1).reshape(x.shape[0], out_c, oh, ow)
            else:
                acc = np.dot(codes, pl.w_int.T)
                y = acc.astype(np.float64) * math.ldexp(pl.scale, -pl.acc_frac)
                if pl.bias is not None:
                    y = y + pl.bias
            codes = _requantize_batch(y, out_fmt, q.rounding, idx + 1, plan)
        elif layer.kind == "relu":
            codes = np.maximum(codes, 0)
        elif layer.kind == "maxpool":
            codes = _pool_windows(codes, layer.window, layer.stride).max(axis=-1)
        elif layer.kind == "avgpool":
            sums = _pool_windows(codes, layer.window, layer.stride).sum(axis=-1)
            mean = np.ldexp(sums.astype(np.float64), -cur_fmt.frac_bits) / (
                layer.window * layer.window
            )
            codes = _requantize_batch(mean, out_fmt, q.rounding, idx + 1, plan)
        else:  # flatten
            codes = codes.reshape(codes.shape[0], -1)
        cur_fmt = out_fmt
    return np.ldexp(codes.astype(np.float64), -cur_fmt.frac_bits)


# ── public entry points ──────────────────────────────────────────────────────


def _as_batch(model: Model, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == model.input_shape:
        return x[None], True
    if x.shape[1:] == model.input_shape:
        return x, False
    raise ValueError(f"input shape {x.shape} does not match model {model.input_shape}")


def forward(model: Model, x: np.ndarray, mode: EvalMode = REFERENCE) -> np.ndarray:
    """Logits for one sample or a batch (softmax omitted; argmax-invariant).

    In quantized mode without explicit ``act_formats`` the given input also
    serves as the calibration batch.
    """
    batch, single = _as_batch(model, x)
    if isinstance(mode, ReferenceMode):
        logits = _reference_forward(model, batch)
    else:
        plan = _prepare(model, batch, mode)
        logits = _quantized_forward(model, batch, mode, plan)
    return logits[0] if single else logits


def evaluate_detailed(model, dataset, mode: EvalMode = REFERENCE) -> tuple[float, dict]:
    """Top-1 accuracy over a labeled set plus run statistics.

    Argmax ties break toward the lowest class index. In quantized mode the
    evaluated inputs are the calibration batch.
    """
    inputs = np.asarray(dataset.inputs, dtype=np.float64)
    labels = np.asarray(dataset.labels)
    if isinstance(mode, ReferenceMode):
        logits = _reference_forward(model, inputs)
        stats = {"saturation_count": 0}
    else:
        plan = _prepare(model, inputs, mode)
        logits = _quantized_forward(model, inputs, mode, plan)
        zeros = sum(int(np.sum(p.qtensor.codes == 0)) for p in plan.planned.values())
        total = sum(p.qtensor.codes.size for p in plan.planned.values())
        stats = {
            "saturation_count": plan.saturation_count,
            "weight_zero_fraction": zeros / total,
        }
    predictions = np.argmax(logits, axis=1)
    return float(np.mean(predictions == labels)), stats


def evaluate(model, dataset, mode: EvalMode = REFERENCE) -> float:
    """Top-1 accuracy of the model on the labeled set."""
    return evaluate_detailed(model, dataset, mode)[0]


def normalized_accuracy(model, dataset, mode: EvalMode) -> float:
    """Quantized-over-reference top-1 ratio; reference accuracy 0 is an error."""
    ref = evaluate(model, dataset, REFERENCE)
    if ref == 0.0:
        raise ValueError("reference accuracy is zero; normalized accuracy undefined")
    return evaluate(model, dataset, mode) / ref
