"""Model and dataset persistence, plus the seeded fixture generator.

A model directory holds ``manifest.json`` (structure: layer kinds, shapes,
strides, blob names) and one ``.bin`` blob per parameter tensor. Blobs are
raw 32-bit little-endian values, 4 bytes per element: IEEE floats for plain
weights, integer codes for quantized layers (which also record the weight
format descriptor and layer scale in the manifest and are widened back to
full-precision weights on load).

Datasets use a single binary file: magic ``QDS1``, a little-endian u32
header (sample count, shape rank, dims, class count), raw float32 samples,
then raw u32 labels.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import (
    LayerSpec,
    Model,
    _reference_forward,
    avgpool,
    conv2d,
    flatten,
    fully_connected,
    maxpool,
    relu,
)
from .formats import decode_array, parse_format
from .quantizer import QTensor

__all__ = [
    "ModelIOError",
    "BadMagicError",
    "MissingBlobError",
    "BlobSizeError",
    "UnknownLayerKindError",
    "LabeledSet",
    "FixtureSpec",
    "save_model",
    "load_model",
    "save_dataset",
    "load_dataset",
    "generate_fixture",
    "write_checksums",
    "verify_checksums",
]

_MANIFEST = "manifest.json"
_MODEL_FORMAT = "mixedquant-model"
_MODEL_VERSION = 1
_DATASET_MAGIC = b"QDS1"


class ModelIOError(ValueError):
    """Base for malformed model directories and dataset files."""


class BadMagicError(ModelIOError):
    """Wrong magic bytes or unsupported container version."""


class MissingBlobError(ModelIOError):
    """Manifest references a blob file that does not exist."""


class BlobSizeError(ModelIOError):
    """Blob byte length does not match the declared shape."""


class UnknownLayerKindError(ModelIOError):
    """Manifest declares a layer kind this build does not implement."""


# ── datasets ─────────────────────────────────────────────────────────────────


@dataclass
class LabeledSet:
    """Evaluation samples with integer labels in [0, class_count)."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ModelIOError("inputs and labels disagree on sample count")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.class_count
        ):
            raise ModelIOError("labels must lie in [0, class_count)")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def save_dataset(dataset: LabeledSet, path: str | Path) -> None:
    path = Path(path)
    shape = dataset.inputs.shape[1:]
    header = struct.pack(
        f"<{2 + len(shape)}I", len(dataset), len(shape), *shape
    ) + struct.pack("<I", dataset.class_count)
    body = dataset.inputs.astype("<f4").tobytes()
    labels = dataset.labels.astype("<u4").tobytes()
    path.write_bytes(_DATASET_MAGIC + header + body + labels)


def load_dataset(path: str | Path) -> LabeledSet:
    raw = Path(path).read_bytes()
    if raw[:4] != _DATASET_MAGIC:
        raise BadMagicError(f"not a dataset file: bad magic {raw[:4]!r}")
    off = 4
    count, rank = struct.unpack_from("<2I", raw, off)
    off += 8
    dims = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    (class_count,) = struct.unpack_from("<I", raw, off)
    off += 4
    n_values = count * int(np.prod(dims)) if rank else count
    expected = off + 4 * n_values + 4 * count
    if len(raw) != expected:
        raise BlobSizeError(f"dataset payload is {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f4", count=n_values, offset=off)
    labels = np.frombuffer(raw, dtype="<u4", count=count, offset=off + 4 * n_values)
    inputs = values.astype(np.float64).reshape(count, *dims)
    return LabeledSet(inputs, labels.astype(np.int64), class_count)


# ── models ───────────────────────────────────────────────────────────────────


def _write_blob(directory: Path, name: str, data: np.ndarray, dtype: str) -> None:
    (directory / name).write_bytes(np.ascontiguousarray(data).astype(dtype).tobytes())


def _read_blob(directory: Path, name: str, shape: tuple[int, ...], dtype: str) -> np.ndarray:
    blob = directory / name
    if not blob.is_file():
        raise MissingBlobError(f"missing blob: {name}")
    raw = blob.read_bytes()
    count = int(np.prod(shape))
    if len(raw) != 4 * count:
        raise BlobSizeError(f"blob {name}: {len(raw)} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape)


def save_model(
    model: Model,
    directory: str | Path,
    quantized: dict[int, QTensor] | None = None,
    metadata: dict | None = None,
) -> None:
    """Write manifest.json plus one blob per parameter tensor.

    ``quantized`` maps layer indices to QTensors; those layers store integer
    codes along with the format descriptor and scale instead of raw floats.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    quantized = quantized or {}
    entries = []
    for i, layer in enumerate(model.layers):
        entry: dict = {"kind": layer.kind}
        if layer.kind == "conv2d":
            entry["stride"] = layer.stride
            entry["pad"] = layer.pad
        elif layer.kind in ("maxpool", "avgpool"):
            entry["window"] = layer.window
            entry["stride"] = layer.stride
        if layer.weights is not None:
            name = f"layer{i}_weights.bin"
            entry["weights"] = name
            entry["weights_shape"] = list(layer.weights.shape)
            if i in quantized:
                q = quantized[i]
                entry["encoding"] = "codes"
                entry["weight_format"] = q.fmt.descriptor()
                entry["scale"] = q.scale
                _write_blob(directory, name, q.codes, "<i4")
            else:
                _write_blob(directory, name, layer.weights, "<f4")
        if layer.bias is not None:
            name = f"layer{i}_bias.bin"
            entry["bias"] = name
            entry["bias_shape"] = list(layer.bias.shape)
            _write_blob(directory, name, layer.bias, "<f4")
        entries.append(entry)
    manifest = {
        "format": _MODEL_FORMAT,
        "version": _MODEL_VERSION,
        "input_shape": list(model.input_shape),
        "layers": entries,
    }
    if metadata:
        manifest["metadata"] = metadata
    (directory / _MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _layer_from_entry(directory: Path, i: int, entry: dict) -> LayerSpec:
    kind = entry.get("kind")
    weights = None
    bias = None
    if "weights" in entry:
        shape = tuple(entry["weights_shape"])
        if entry.get("encoding") == "codes":
            codes = _read_blob(directory, entry["weights"], shape, "<i4")
            fmt = parse_format(entry["weight_format"])
            weights = decode_array(codes.astype(np.int64), fmt) * float(entry["scale"])
        else:
            weights = _read_blob(directory, entry["weights"], shape, "<f4").astype(np.float64)
    if "bias" in entry:
        bias = _read_blob(
            directory, entry["bias"], tuple(entry["bias_shape"]), "<f4"
        ).astype(np.float64)
    if kind == "conv2d":
        return conv2d(weights, bias, stride=entry.get("stride", 1), pad=entry.get("pad", 0))
    if kind == "fc":
        return fully_connected(weights, bias)
    if kind == "relu":
        return relu()
    if kind == "maxpool":
        return maxpool(entry.get("window", 2), entry.get("stride"))
    if kind == "avgpool":
        return avgpool(entry.get("window", 2), entry.get("stride"))
    if kind == "flatten":
        return flatten()
    raise UnknownLayerKindError(f"layer {i}: unknown kind {kind!r}")


def load_model(directory: str | Path) -> Model:
    directory = Path(directory)
    manifest_path = directory / _MANIFEST
    if not manifest_path.is_file():
        raise MissingBlobError(f"no {_MANIFEST} in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelIOError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != _MODEL_FORMAT:
        raise BadMagicError(f"not a model manifest: format {manifest.get('format')!r}")
    if manifest.get("version") != _MODEL_VERSION:
        raise BadMagicError(f"unsupported manifest version {manifest.get('version')!r}")
    layers = [
        _layer_from_entry(directory, i, entry)
        for i, entry in enumerate(manifest.get("layers", []))
    ]
    return Model(layers, tuple(manifest["input_shape"]))


# ── checksums ────────────────────────────────────────────────────────────────


def write_checksums(directory: str | Path, files: list[Path] | None = None) -> Path:
    """Record sha256 digests of fixture files for later integrity checks."""
    directory = Path(directory)
    if files is None:
        files = sorted(
            p for p in directory.rglob("*") if p.is_file() and p.name != "checksums.txt"
        )
    lines = [
        f"{hashlib.sha256(p.read_bytes()).hexdigest()}  {p.relative_to(directory)}"
        for p in files
    ]
    out = directory / "checksums.txt"
    out.write_text("\n".join(lines) + "\n")
    return out


def verify_checksums(directory: str | Path) -> None:
    directory = Path(directory)
    listing = directory / "checksums.txt"
    if not listing.is_file():
        raise MissingBlobError(f"no checksums.txt in {directory}")
    for line in listing.read_text().splitlines():
        digest, name = line.split("  ", 1)
        target = directory / name
        if not target.is_file():
            raise MissingBlobError(f"checksummed file missing: {name}")
        if hashlib.sha256(target.read_bytes()).hexdigest() != digest:
            raise ModelIOError(f"checksum mismatch: {name}")


# ── fixture generation ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class FixtureSpec:
    """Shape of the generated desk-scale network and sample set."""

    input_hw: int = 16
    in_channels: int = 1
    conv_channels: int = 8
    kernel: int = 5
    pad: int = 2
    fc_hidden: int = 64
    classes: int = 10
    samples: int = 256
    candidate_factor: int = 24
    input_cell: int = 4
    bulk_clip: float = 4.0
    bulk_floor: float = 0.4
    outlier_scale: float = 64.0


def _fixture_weights(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    spec: FixtureSpec,
    outlier: bool = True,
):
    """Band-truncated zero-mean Gaussian, optionally with one large outlier.

    The outlier pins the per-layer maximum six binades above the bulk
    sigma, so after normalization the magnitude histogram concentrates at
    exponents -5..-8 the way trained conv nets do. The two-sided
    truncation (bulk_floor..bulk_clip sigmas) keeps the band edges clean:
    an exponent grid either represents the whole bulk or flushes all of
    it, never a chaotic partial slice.
    """
    w = rng.normal(0.0, 1.0, size=shape)
    flat = w.reshape(-1)
    mag = np.abs(flat)
    bad = np.flatnonzero((mag >= spec.bulk_clip) | (mag < spec.bulk_floor))
    while bad.size:
        flat[bad] = rng.normal(0.0, 1.0, size=bad.size)
        mag = np.abs(flat[bad])
        bad = bad[(mag >= spec.bulk_clip) | (mag < spec.bulk_floor)]
    if outlier:
        pos = int(rng.integers(flat.size))
        flat[pos] = spec.outlier_scale * (1.0 if rng.integers(2) else -1.0)
    return w.astype(np.float32).astype(np.float64)


def generate_fixture(seed: int, spec: FixtureSpec = FixtureSpec()) -> tuple[Model, LabeledSet]:
    """Seeded small CNN plus a labeled sample set.

    Labels are the model's own reference-mode argmax, so reference top-1
    accuracy is 1.0 by construction. Samples are drawn from a candidate
    pool stratified per class by decision margin, which keeps classes
    balanced and decisions stable under mild quantization noise. All
    parameters and samples are float32-representable so the on-disk model
    reproduces in-memory values exactly.
    """
    sizes = (
        spec.input_hw,
        spec.in_channels,
        spec.conv_channels,
        spec.kernel,
        spec.fc_hidden,
        spec.classes,
        spec.samples,
        spec.candidate_factor,
        spec.input_cell,
    )
    if min(sizes) < 1 or spec.classes < 2:
        raise ValueError(f"degenerate fixture spec: {spec}")
    if spec.input_hw % spec.input_cell:
        raise ValueError("input_hw must be a multiple of input_cell")
    rng = np.random.default_rng(seed)
    hw, c_in = spec.input_hw, spec.in_channels
    conv_w = _fixture_weights(rng, (spec.conv_channels, c_in, spec.kernel, spec.kernel), spec)
    conv_b = rng.normal(0.0, 0.02, spec.conv_channels).astype(np.float32).astype(np.float64)
    pooled = ((hw + 2 * spec.pad - spec.kernel) + 1) // 2
    flat = spec.conv_channels * pooled * pooled
    fc1_w = _fixture_weights(rng, (spec.fc_hidden, flat), spec)
    fc1_b = rng.normal(0.0, 0.02, spec.fc_hidden).astype(np.float32).astype(np.float64)
    # the classifier head spreads each decision over all hidden units, so
    # no outlier here: margins then degrade gracefully with weight noise
    fc2_w = _fixture_weights(rng, (spec.classes, spec.fc_hidden), spec, outlier=False)

    def build(fc2_bias: np.ndarray) -> Model:
        return Model(
            [
                conv2d(conv_w, conv_b, stride=1, pad=spec.pad),
                relu(),
                maxpool(2),
                flatten(),
                fully_connected(fc1_w, fc1_b),
                fully_connected(fc2_w, fc2_bias),
            ],
            (c_in, hw, hw),
        )

    n_cand = spec.samples * spec.candidate_factor
    # blocky low-resolution patterns instead of per-pixel noise: spatial
    # averaging inside the conv window would otherwise wash out the logit
    # spread that the margin selection below feeds on
    cell = spec.input_cell
    coarse = rng.uniform(0.0, 1.0, (n_cand, c_in, hw // cell, hw // cell))
    cand = np.kron(coarse, np.ones((1, 1, cell, cell)))
    cand = cand.astype(np.float32).astype(np.float64)

    # a random net funnels argmax onto one or two classes; centering each
    # logit at its candidate-pool median spreads the winners so every class
    # has members to draw from
    raw_logits = _reference_forward(build(np.zeros(spec.classes)), cand)
    fc2_b = (-np.median(raw_logits, axis=0)).astype(np.float32).astype(np.float64)
    model = build(fc2_b)
    logits = _reference_forward(model, cand)
    labels = np.argmax(logits, axis=1)
    top2 = np.partition(logits, -2, axis=1)[:, -2:]
    # relative margin: weight noise perturbs logits in proportion to their
    # spread, so ranking by (top - runner-up) / spread selects the samples
    # whose argmax survives quantization
    spread = np.std(logits, axis=1) + 1e-12
    margins = (top2[:, 1] - top2[:, 0]) / spread

    # stratified round-robin by descending margin keeps labels balanced
    pools = []
    for cls in range(spec.classes):
        members = np.flatnonzero(labels == cls)
        pools.append(list(members[np.argsort(-margins[members], kind="stable")]))
    chosen: list[int] = []
    while len(chosen) < spec.samples and any(pools):
        for pool in pools:
            if pool:
                chosen.append(pool.pop(0))
                if len(chosen) == spec.samples:
                    break
    chosen.sort()
    dataset = LabeledSet(cand[chosen], labels[chosen], spec.classes)
    return model, dataset
