"""Weight-distribution statistics, accuracy sweeps, and storage accounting.

The sweep runner evaluates a model at every format in a grid and emits one
record per grid point, in grid order, with per-record error isolation: a
grid point that raises produces an error record instead of aborting the
sweep. Reports serialize to CSV (fixed column order, stable formatting,
byte-identical across identical-seed runs) and to JSON with full metadata.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import Model, Quantized, evaluate, evaluate_detailed
from .formats import (
    FixedFormat,
    MiniFloatFormat,
    NEAREST,
    RoundingMode,
    WeightFormat,
    quantize_array,
    stochastic,
)
from .quantizer import normalize_layer

__all__ = [
    "exponent_histogram",
    "zero_fraction",
    "StorageReport",
    "storage_report",
    "SweepRecord",
    "SweepReport",
    "sweep",
    "fixed_point_grid",
    "exponent_range_grid",
    "CSV_COLUMNS",
    "PUBLISHED_ACCURACY",
    "PUBLISHED_NETWORK_ACCURACY",
]

CSV_COLUMNS = ("format", "normalized_accuracy", "saturation_count", "zero_fraction")


def exponent_histogram(w: np.ndarray) -> dict[int | str, int]:
    """Count elements per power-of-two binade, keyed by floor(log2|w|).

    Zeros land under the ``"zero"`` key (present only when there are any).
    Counts always sum to the element count.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("exponent_histogram needs a nonempty tensor")
    mag = np.abs(w.reshape(-1))
    nonzero = mag[mag > 0.0]
    # frexp puts |w| = f * 2**e with f in [0.5, 1), so floor(log2|w|) = e - 1
    _, exps = np.frexp(nonzero)
    binades = exps.astype(np.int64) - 1
    hist: dict[int | str, int] = {}
    values, counts = np.unique(binades, return_counts=True)
    for v, c in zip(values, counts):
        hist[int(v)] = int(c)
    zeros = mag.size - nonzero.size
    if zeros:
        hist["zero"] = zeros
    return hist


def zero_fraction(
    w: np.ndarray,
    fmt: WeightFormat,
    rounding: RoundingMode = NEAREST,
    rng: np.random.Generator | None = None,
) -> float:
    """Fraction of weights that quantize to exactly zero.

    Normalizes to unit max magnitude first, matching how layers are encoded,
    so the answer depends only on the shape of the distribution.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("zero_fraction needs a nonempty tensor")
    if float(np.max(np.abs(w))) == 0.0:
        return 1.0
    normalized, _ = normalize_layer(w)
    codes = quantize_array(normalized, fmt, rounding, rng)
    return float(np.mean(codes == 0))


# ── storage accounting ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class StorageReport:
    baseline_bits: int
    proposed_bits: int
    weight_count: int
    bits_saved: int
    percent_reduction: float


def storage_report(
    baseline: WeightFormat, proposed: WeightFormat, weight_count: int = 1
) -> StorageReport:
    """Per-weight storage comparison; negative reduction when proposed is wider."""
    if weight_count < 0:
        raise ValueError("weight_count must be non-negative")
    wb = baseline.width_bits
    wp = proposed.width_bits
    return StorageReport(
        baseline_bits=wb,
        proposed_bits=wp,
        weight_count=weight_count,
        bits_saved=(wb - wp) * weight_count,
        percent_reduction=100.0 * (wb - wp) / wb,
    )


# ── sweeps ───────────────────────────────────────────────────────────────────


@dataclass
class SweepRecord:
    """One grid point; on failure only ``format`` and ``error`` are set."""

    format: str
    normalized_accuracy: float | None = None
    saturation_count: int | None = None
    zero_fraction: float | None = None
    error: str | None = None


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


@dataclass
class SweepReport:
    records: list[SweepRecord]
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for r in self.records:
            lines.append(",".join(_csv_cell(getattr(r, col)) for col in CSV_COLUMNS))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {"metadata": self.metadata, "records": [asdict(r) for r in self.records]}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())


def _sweep_point(
    model: Model,
    dataset,
    fmt: WeightFormat,
    ref_accuracy: float,
    act_bits: int,
    rounding: RoundingMode,
    acc_bits: int | None,
    seed: int,
    index: int,
) -> SweepRecord:
    if rounding.kind == "stochastic":
        # distinct stream per grid point; derived, so the sweep seed alone
        # pins every record
        point_rounding = stochastic(int(np.random.SeedSequence([seed, index]).generate_state(1)[0]))
    else:
        point_rounding = rounding
    mode = Quantized(w_fmt=fmt, act_bits=act_bits, rounding=point_rounding, acc_bits=acc_bits)
    accuracy, stats = evaluate_detailed(model, dataset, mode)
    return SweepRecord(
        format=fmt.descriptor(),
        normalized_accuracy=accuracy / ref_accuracy,
        saturation_count=stats["saturation_count"],
        zero_fraction=stats["weight_zero_fraction"],
    )


def sweep(
    model: Model,
    dataset,
    grid: list[WeightFormat],
    act_bits: int = 16,
    rounding: RoundingMode = NEAREST,
    acc_bits: int | None = None,
    seed: int = 0,
    parallelism: int | None = None,
    metadata: dict | None = None,
) -> SweepReport:
    """Evaluate normalized accuracy at every format in ``grid``.

    Grid points are independent; they may run on a thread pool
    (``parallelism`` caps the worker count) and the report is assembled in
    grid order either way, so results never depend on scheduling.
    """
    if not grid:
        raise ValueError("sweep needs a nonempty format grid")
    ref_accuracy = evaluate(model, dataset)
    if ref_accuracy == 0.0:
        raise ValueError("reference accuracy is zero; normalized accuracy undefined")

    def run(i_fmt: tuple[int, WeightFormat]) -> SweepRecord:
        i, fmt = i_fmt
        try:
            return _sweep_point(
                model, dataset, fmt, ref_accuracy, act_bits, rounding, acc_bits, seed, i
            )
        except Exception as exc:  # per-record isolation: sweep must not abort
            return SweepRecord(format=fmt.descriptor(), error=f"{type(exc).__name__}: {exc}")

    work = list(enumerate(grid))
    if parallelism is not None and parallelism > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(run, work))
    else:
        records = [run(item) for item in work]

    meta = {
        "seed": seed,
        "act_bits": act_bits,
        "rounding": rounding.kind,
        "reference_accuracy": ref_accuracy,
        "grid": [fmt.descriptor() for fmt in grid],
    }
    if metadata:
        meta.update(metadata)
    return SweepReport(records=records, metadata=meta)


def fixed_point_grid(lo: int = 2, hi: int = 12) -> list[WeightFormat]:
    """Fixed formats with total bits lo..hi, all magnitude bits fractional.

    Normalized weights never exceed 1, so the integer field is just the sign.
    """
    return [FixedFormat(total_bits=n, frac_bits=n - 1) for n in range(lo, hi + 1)]


def exponent_range_grid(
    mantissa_bits: int,
    ranges: tuple[int, ...] = (2, 4, 8, 16),
    implicit_bit: bool = True,
) -> list[WeightFormat]:
    """Minifloat formats at one mantissa width across exponent-range caps."""
    return [
        MiniFloatFormat.with_exponent_range(mantissa_bits, r, implicit_bit) for r in ranges
    ]


# ── published full-scale results (documented targets, not desk-reproducible) ─

# AlexNet normalized top-1 accuracy by (mantissa bits m, exponent bits e);
# e=0 is fixed-point, floats carry the implicit bit.
PUBLISHED_ACCURACY: dict[tuple[int, int], float] = {
    (1, 0): 0.002, (1, 1): 0.002, (1, 2): 0.003, (1, 3): 0.920, (1, 4): 0.918, (1, 5): 0.918,
    (2, 0): 0.003, (2, 1): 0.003, (2, 2): 0.003, (2, 3): 0.983, (2, 4): 0.982, (2, 5): 0.982,
    (3, 0): 0.002, (3, 1): 0.003, (3, 2): 0.003, (3, 3): 0.995, (3, 4): 0.995, (3, 5): 0.995,
    (4, 0): 0.016, (4, 1): 0.003, (4, 2): 0.003, (4, 3): 0.997, (4, 4): 1.001, (4, 5): 1.001,
    (5, 0): 0.775, (5, 1): 0.002, (5, 2): 0.003, (5, 3): 0.994, (5, 4): 0.999, (5, 5): 0.998,
    (6, 0): 0.979, (6, 1): 0.002, (6, 2): 0.003, (6, 3): 0.995, (6, 4): 0.999, (6, 5): 0.999,
    (7, 0): 0.996, (7, 1): 0.002, (7, 2): 0.003, (7, 3): 0.995, (7, 4): 0.999, (7, 5): 0.999,
    (8, 0): 0.998, (8, 1): 0.002, (8, 2): 0.003, (8, 3): 0.995, (8, 4): 1.000, (8, 5): 1.000,
    (9, 0): 1.001, (9, 1): 0.002, (9, 2): 0.003, (9, 3): 0.995, (9, 4): 1.000, (9, 5): 1.000,
    (10, 0): 0.999, (10, 1): 0.002, (10, 2): 0.003, (10, 3): 0.995, (10, 4): 1.001, (10, 5): 1.001,
}

# normalized accuracy by network for three (m, e) choices
PUBLISHED_NETWORK_ACCURACY: dict[tuple[int, int], dict[str, float]] = {
    (7, 0): {"AlexNet": 1.00, "SqueezeNet": 1.00, "GoogLeNet": 0.85, "VGG-16": 0.02},
    (10, 0): {"AlexNet": 1.00, "SqueezeNet": 0.99, "GoogLeNet": 0.99, "VGG-16": 1.00},
    (3, 4): {"AlexNet": 0.99, "SqueezeNet": 0.99, "GoogLeNet": 0.99, "VGG-16": 1.00},
}
