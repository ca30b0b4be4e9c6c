"""Command-line front end: fixture generation, inspection, quantization,
evaluation, sweeps, storage accounting, and datapath verification.

Exit codes: 0 success, 2 usage error, 3 I/O or file-format error,
4 verification failure, 1 anything else. All diagnostics go to stderr;
reports go to stdout or the file given with ``-o`` (``-o -`` is stdout).

The seed defaults to DEFAULT_SEED; the MIXEDQUANT_SEED environment
variable overrides the default, and an explicit --seed flag beats both.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    exponent_histogram,
    exponent_range_grid,
    fixed_point_grid,
    storage_report,
    sweep,
    zero_fraction,
)
from .engine import (
    Quantized,
    REFERENCE,
    evaluate,
    evaluate_detailed,
)
from .formats import (
    FixedFormat,
    FormatError,
    NEAREST,
    decode,
    enumerate_codes,
    parse_format,
    stochastic,
)
from .mac import MacConfig, mixed_multiply, required_acc_bits
from .model_io import (
    FixtureSpec,
    ModelIOError,
    generate_fixture,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    write_checksums,
)
from .quantizer import quantize_tensor

DEFAULT_SEED = 0x5EED

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VERIFY = 4


class VerificationError(Exception):
    """A self-check (mac-verify) found mismatches."""


def _resolve_seed(flag_value: int | None) -> int:
    if flag_value is not None:
        return flag_value
    env = os.environ.get("MIXEDQUANT_SEED")
    if env is not None:
        try:
            return int(env, 0)
        except ValueError as exc:
            raise FormatError(f"MIXEDQUANT_SEED is not an integer: {env!r}") from exc
    return DEFAULT_SEED


def _rounding_mode(name: str, seed: int):
    return NEAREST if name == "nearest" else stochastic(seed)


def _out_stream(path: str):
    """Writable text target for -o; '-' means stdout."""
    if path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _emit(path: str, text: str) -> None:
    stream, close = _out_stream(path)
    try:
        stream.write(text)
    finally:
        if close:
            stream.close()


# ── subcommand handlers ──────────────────────────────────────────────────────


def _cmd_gen_fixture(args) -> int:
    seed = _resolve_seed(args.seed)
    spec = FixtureSpec(samples=args.samples)
    model, dataset = generate_fixture(seed, spec)
    out = Path(args.output)
    model_dir = out / "model"
    save_model(model, model_dir, metadata={"seed": seed, "fixture": True})
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out / "dataset.bin")
    write_checksums(out)
    print(f"model: {model_dir}", file=sys.stderr)
    print(f"dataset: {out / 'dataset.bin'} ({len(dataset)} samples)", file=sys.stderr)
    return EXIT_OK


def _cmd_inspect(args) -> int:
    model = load_model(args.model)
    lines = []
    header = "layer kind count min_exp mode_exp"
    if args.format is not None:
        header += " zero_fraction"
    lines.append(header)
    for idx, layer in model.weighted_layers():
        w = layer.weights / np.max(np.abs(layer.weights))
        hist = exponent_histogram(w)
        exps = [k for k in hist if isinstance(k, int)]
        mode_exp = max(exps, key=lambda k: (hist[k], -k)) if exps else "-"
        min_exp = min(exps) if exps else "-"
        row = f"{idx} {layer.kind} {layer.weights.size} {min_exp} {mode_exp}"
        if args.format is not None:
            row += f" {zero_fraction(layer.weights, args.format):.6g}"
        lines.append(row)
    _emit(args.output, "\n".join(lines) + "\n")
    if args.plot:
        from .plots import layer_histogram_figures

        for path in layer_histogram_figures(model, args.plot_dir or Path(args.model)):
            print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_quantize(args) -> int:
    seed = _resolve_seed(args.seed)
    model = load_model(args.model)
    rounding = _rounding_mode(args.rounding, seed)
    quantized = {}
    for idx, layer in model.weighted_layers():
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0, idx]))
        quantized[idx] = quantize_tensor(layer.weights, args.format, rounding, rng)
    save_model(
        model,
        args.output,
        quantized=quantized,
        metadata={"weight_format": args.format.descriptor(), "seed": seed},
    )
    for idx, q in quantized.items():
        print(f"layer {idx}: zero_fraction {q.zero_fraction():.6g}", file=sys.stderr)
    return EXIT_OK


def _cmd_eval(args) -> int:
    seed = _resolve_seed(args.seed)
    model = load_model(args.model)
    dataset = load_dataset(args.dataset)
    ref_acc = evaluate(model, dataset, REFERENCE)
    if args.reference:
        quant_acc, stats = ref_acc, {"saturation_count": 0}
    else:
        if args.format is None:
            raise FormatError("eval needs --format unless --reference is given")
        mode = Quantized(
            w_fmt=args.format,
            act_bits=args.act_bits,
            rounding=_rounding_mode(args.rounding, seed),
            acc_bits=args.acc_bits,
        )
        quant_acc, stats = evaluate_detailed(model, dataset, mode)
    if ref_acc == 0.0:
        raise VerificationError("reference accuracy is zero; normalized accuracy undefined")
    text = (
        f"reference_accuracy {ref_acc:.6f}\n"
        f"quantized_accuracy {quant_acc:.6f}\n"
        f"normalized_accuracy {quant_acc / ref_acc:.6f}\n"
        f"saturation_count {stats['saturation_count']}\n"
    )
    _emit(args.output, text)
    return EXIT_OK


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise FormatError(f"not a comma-separated integer list: {text!r}") from exc


def _sweep_grid(args) -> list:
    grid: list = []
    if args.fixed is not None:
        lo, _, hi = args.fixed.partition(":")
        try:
            grid.extend(fixed_point_grid(int(lo), int(hi)))
        except ValueError as exc:
            raise FormatError(f"--fixed wants LO:HI, got {args.fixed!r}") from exc
    if args.float_m is not None:
        grid.extend(exponent_range_grid(args.float_m, tuple(_parse_int_list(args.ranges))))
    if args.formats:
        grid.extend(parse_format(part) for part in args.formats.split(",") if part)
    if not grid:
        raise FormatError("sweep needs --fixed, --float-m, or --formats")
    return grid


def _cmd_sweep(args) -> int:
    seed = _resolve_seed(args.seed)
    model = load_model(args.model)
    dataset = load_dataset(args.dataset)
    grid = _sweep_grid(args)
    report = sweep(
        model,
        dataset,
        grid,
        act_bits=args.act_bits,
        rounding=_rounding_mode(args.rounding, seed),
        seed=seed,
        parallelism=args.jobs,
        metadata={"model": str(args.model), "dataset": str(args.dataset)},
    )
    _emit(args.output, report.to_csv())
    if args.json is not None:
        report.write_json(args.json)
    if args.plot:
        if args.output == "-":
            raise FormatError("--plot needs a file -o to place the figure next to")
        from .plots import sweep_figure

        path = sweep_figure(report, Path(args.output).with_suffix(".png"))
        print(f"wrote {path}", file=sys.stderr)
    failed = [r for r in report.records if r.error is not None]
    for r in failed:
        print(f"{r.format}: {r.error}", file=sys.stderr)
    return EXIT_OK


def _cmd_storage(args) -> int:
    rep = storage_report(args.baseline, args.proposed, args.count)
    text = (
        f"baseline {rep.baseline_bits} bits, proposed {rep.proposed_bits} bits: "
        f"{rep.percent_reduction:.1f}% reduction"
        f" ({rep.bits_saved} bits saved over {rep.weight_count} weights)\n"
    )
    _emit(args.output, text)
    return EXIT_OK


def _cmd_mac_verify(args) -> int:
    act = args.act
    if not isinstance(act, FixedFormat):
        raise FormatError("--act must be a fixed-point format")
    w_fmt = args.weight
    cfg = MacConfig(
        act_fmt=act,
        w_fmt=w_fmt,
        acc_bits=max(32, required_acc_bits(act, w_fmt, 1)),
    )
    start = time.monotonic()
    total = 0
    exact = 0
    act_codes = enumerate_codes(act)
    w_codes = enumerate_codes(w_fmt)
    for w_code in w_codes:
        w_val = Fraction(decode(int(w_code), w_fmt))
        for a_code in act_codes:
            got = mixed_multiply(int(a_code), int(w_code), cfg).to_fraction()
            want = Fraction(int(a_code), 1 << act.frac_bits) * w_val
            total += 1
            exact += got == want
    elapsed = time.monotonic() - start
    print(f"{exact}/{total} exact", file=sys.stdout)
    print(f"elapsed {elapsed:.2f}s", file=sys.stderr)
    if exact != total:
        raise VerificationError(f"{total - exact} of {total} products diverged")
    return EXIT_OK


# ── parser ───────────────────────────────────────────────────────────────────


def _add_seed(p) -> None:
    p.add_argument(
        "--seed",
        type=lambda s: int(s, 0),
        default=None,
        help=f"RNG seed (default {DEFAULT_SEED:#x}; MIXEDQUANT_SEED overrides the default)",
    )


def _add_rounding(p) -> None:
    p.add_argument(
        "--rounding",
        choices=("nearest", "stochastic"),
        default="nearest",
        help="rounding mode for weights and activations",
    )


def _add_output(p) -> None:
    p.add_argument("-o", "--output", default="-", help="output file, or - for stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedquant",
        description="Bit-exact CNN inference with minifloat weights and fixed-point activations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-fixture", help="generate the seeded fixture model and dataset")
    p.add_argument("-o", "--output", required=True, help="directory to write model/ and dataset.bin")
    p.add_argument("--samples", type=int, default=256, help="dataset size")
    _add_seed(p)
    p.set_defaults(func=_cmd_gen_fixture)

    p = sub.add_parser("inspect", help="per-layer exponent histograms and zero fractions")
    p.add_argument("model", help="model directory")
    p.add_argument("--format", type=parse_format, default=None, help="weight format for zero fractions")
    p.add_argument("--plot", action="store_true", help="write histogram PNGs")
    p.add_argument("--plot-dir", default=None, help="directory for PNGs (default: model dir)")
    _add_output(p)
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("quantize", help="write a model with quantized weights")
    p.add_argument("model", help="model directory")
    p.add_argument("-o", "--output", required=True, help="output model directory")
    p.add_argument("--format", type=parse_format, required=True, help="weight format descriptor")
    _add_rounding(p)
    _add_seed(p)
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("eval", help="accuracy of a model on a dataset")
    p.add_argument("model", help="model directory")
    p.add_argument("dataset", help="dataset file")
    p.add_argument("--format", type=parse_format, default=None, help="weight format descriptor")
    p.add_argument("--reference", action="store_true", help="full-precision reference mode")
    p.add_argument("--act-bits", type=int, default=16, help="activation width in bits")
    p.add_argument("--acc-bits", type=int, default=None, help="accumulator width (default: auto)")
    _add_rounding(p)
    _add_seed(p)
    _add_output(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="normalized accuracy over a format grid (CSV)")
    p.add_argument("model", help="model directory")
    p.add_argument("dataset", help="dataset file")
    p.add_argument("--fixed", default=None, metavar="LO:HI", help="fixed-point grid, total bits LO..HI")
    p.add_argument("--float-m", type=int, default=None, help="minifloat grid: mantissa bits")
    p.add_argument("--ranges", default="2,4,8,16", help="exponent ranges for --float-m")
    p.add_argument("--formats", default=None, help="comma-separated explicit descriptors")
    p.add_argument("--act-bits", type=int, default=16, help="activation width in bits")
    p.add_argument("--json", default=None, help="also write the full report as JSON")
    p.add_argument("--plot", action="store_true", help="render accuracy figure next to the CSV")
    p.add_argument("--jobs", type=int, default=os.cpu_count(), help="max parallel grid points")
    _add_rounding(p)
    _add_seed(p)
    _add_output(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("storage", help="weight storage comparison of two formats")
    p.add_argument("--baseline", type=parse_format, required=True)
    p.add_argument("--proposed", type=parse_format, required=True)
    p.add_argument("--count", type=int, default=1, help="number of weights")
    _add_output(p)
    p.set_defaults(func=_cmd_storage)

    p = sub.add_parser("mac-verify", help="exhaustive datapath check against exact rationals")
    p.add_argument("--act", type=parse_format, required=True, help="fixed-point activation format")
    p.add_argument("--weight", type=parse_format, required=True, help="weight format")
    p.set_defaults(func=_cmd_mac_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except Exception as exc:  # last resort; keep the CLI's exit-code contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
