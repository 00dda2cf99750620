"""Command-line harness: ``ttsvd decompose``, ``ttsvd bench`` and ``ttsvd model``."""
from __future__ import annotations

import argparse
import math
import re
import statistics
import sys
import time
import warnings

import numpy as np

from . import perfmodel
from .counters import RunCounters
from .decompose import (
    ThickBoundsParams,
    choose_combined_dims,
    split_leading,
    tt_svd_distributed,
    tt_svd_reference,
    tt_svd_thick_bounds,
    tt_svd_tsqr,
    tt_svd_two_sided,
)
from .errors import AllocationError, DegenerateDimension, TTSVDError
from .report import Report, counter_rows, emit_report, format_rmax, format_shape, total_row
from .small_dense import UNBOUNDED, TruncationSpec
from .tensor import PaddedMatrix, check_dims, random_tensor
from .train import save_tt, tt_error
from .tsqr import default_workers, tsqr

VARIANTS = ("reference", "tsqr", "thick", "two-sided", "distributed")
EXIT_NUMERICAL = 1
EXIT_USAGE = 2
EXIT_SHAPE = 3

# informative performance targets
TSQR_COPY_FRACTION = 0.30
THICK_COPY_MULTIPLE = 10.0


class UsageError(Exception):
    pass


def parse_shape(text: str) -> tuple[int, ...]:
    """``b^d`` (``d`` copies of ``b``) or ``n1xn2x...``."""
    text = text.strip()
    m = re.fullmatch(r"(\d+)\^(\d+)", text)
    if m:
        dims = (int(m.group(1)),) * int(m.group(2))
    elif re.fullmatch(r"\d+(x\d+)*", text):
        dims = tuple(int(s) for s in text.split("x"))
    else:
        raise UsageError(f"cannot parse shape {text!r}; use e.g. 2^12 or 4x4x2")
    if not dims or min(dims) < 1:
        raise UsageError(f"shape {text!r} has an empty or zero extent")
    return dims


def parse_rmax(text: str) -> int:
    if text.lower() in ("inf", "none", "unbounded"):
        return UNBOUNDED
    try:
        r = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid rank {text!r}") from None
    if r < 1:
        raise argparse.ArgumentTypeError("rmax must be >= 1")
    return r


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("expected a nonnegative number")
    return v


def _add_common(p: argparse.ArgumentParser, multi_variant=False):
    p.add_argument("--shape", required=True, help="tensor shape, e.g. 2^20 or 4x4x2")
    p.add_argument("--rmax", type=parse_rmax, default=UNBOUNDED, help="rank cap (default: inf)")
    p.add_argument("--eps", type=_nonneg_float, default=0.0, help="relative error tolerance")
    if multi_variant:
        p.add_argument("--variant", default="tsqr",
                       help="comma-separated list of " + "|".join(VARIANTS))
    else:
        p.add_argument("--variant", choices=VARIANTS, default="tsqr")
    p.add_argument("--f1min", type=float, default=None, help="minimal first-step reduction (thick)")
    p.add_argument("--mmin", type=_positive_int, default=None, help="minimal merged width (thick)")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads (default: TTSVD_THREADS or logical cores)")
    p.add_argument("--partitions", type=_positive_int, default=1, help="partitions (distributed)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", default=None, help="machine profile file (key = value)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default=None, help="report path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttsvd", description="TT-SVD of dense random tensors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="decompose one random tensor")
    _add_common(p)
    p.add_argument("--verify", action="store_true", help="compute the reconstruction error")
    p.add_argument("--tt-out", default=None, help="write the tensor train to this file")

    p = sub.add_parser("bench", help="repeat runs and report min/median timings")
    _add_common(p, multi_variant=True)
    p.add_argument("--repeats", type=int, default=3, help="runs per variant, first one discarded")
    p.add_argument("--keep-warmup", action="store_true", help="also time the first run")
    p.add_argument("--no-checks", action="store_true", help="skip the bandwidth checks")
    p.add_argument("--verify", action="store_true")

    p = sub.add_parser("model", help="print the roofline cost model")
    p.add_argument("--shape", required=True)
    p.add_argument("--rmax", type=parse_rmax, default=UNBOUNDED)
    p.add_argument("--variant", choices=VARIANTS, default="tsqr")
    p.add_argument("--f1min", type=float, default=None)
    p.add_argument("--mmin", type=_positive_int, default=None)
    p.add_argument("--profile", default=None)
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--out", default=None)
    return parser


# --------------------------------------------------------------------------
# shared helpers


def _tensor_dims(text: str) -> tuple[int, ...]:
    dims = check_dims(parse_shape(text))
    if len(dims) < 2:
        raise DegenerateDimension(f"need at least two dimensions, got {dims}")
    return dims


def thick_params(args) -> ThickBoundsParams:
    kw = {}
    if args.f1min is not None:
        kw["f1_min"] = args.f1min
    if args.mmin is not None:
        kw["m_min"] = args.mmin
    try:
        return ThickBoundsParams(**kw)
    except ValueError as e:
        raise UsageError(str(e)) from None


def combined_modes(variant: str, dims, args, r_max: int) -> int:
    if variant == "thick" or (variant == "two-sided" and (args.f1min is not None or args.mmin is not None)):
        return choose_combined_dims(dims, thick_params(args), r_max)[0]
    return 1


def load_profile(path):
    if path is None:
        return perfmodel.DEFAULT_PROFILE
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return perfmodel.load_profile(path)
    except (OSError, ValueError) as e:
        raise UsageError(f"bad profile file: {e}") from None


def run_variant(variant: str, X, spec: TruncationSpec, args, workers: int, counters: RunCounters):
    if variant == "reference":
        return tt_svd_reference(X, spec, counters)
    if variant == "tsqr":
        return tt_svd_tsqr(X, spec, workers, counters)
    if variant == "thick":
        return tt_svd_thick_bounds(X, spec, thick_params(args), workers, counters)
    if variant == "two-sided":
        params = thick_params(args) if (args.f1min is not None or args.mmin is not None) else None
        return tt_svd_two_sided(X, spec, params, workers, counters)
    if variant == "distributed":
        parts = split_leading(X, args.partitions)
        return tt_svd_distributed(parts, spec, workers, counters)
    raise UsageError(f"unknown variant {variant!r}")


def model_summary(dims, ranks, k: int, r_max: int, profile) -> dict:
    """Per-step model totals for the observed ranks plus the f-bar bound where it applies."""
    n_bar = math.prod(dims)
    plan, tot = perfmodel.per_step_model(dims, ranks, combine_plan=k, profile=profile)
    out = {
        "per_step_flops": tot.n_flops,
        "per_step_bytes": tot.v_bytes,
        "per_step_volume_elements": tot.v_bytes / 8 / n_bar,
        "per_step_t_min": tot.t_min,
        "reduction_factors": plan.f,
        "f_bar": plan.f_bar,
    }
    if 0 < plan.f_bar < 1:
        out["bound_bytes"] = perfmodel.ttsvd_volume_estimate(n_bar, plan.f_bar)
        out["bound_volume_elements"] = out["bound_bytes"] / 8 / n_bar
        if r_max != UNBOUNDED:
            out["bound_flops"] = perfmodel.ttsvd_flops_estimate(n_bar, r_max, plan.f_bar)
    return out


def _warn(meta: dict, message: str) -> None:
    warnings.warn(message, RuntimeWarning, stacklevel=2)
    meta.setdefault("warnings", []).append(message)


def _verify(meta: dict, X, tt, spec: TruncationSpec) -> bool:
    err = tt_error(X, tt)
    meta["error"] = err
    if spec.r_max == UNBOUNDED and err > spec.eps + 1e-10:
        meta.setdefault("failures", []).append(f"error {err:.3e} exceeds eps {spec.eps:g}")
        return False
    return True


# --------------------------------------------------------------------------
# commands


def cmd_decompose(args) -> int:
    dims = _tensor_dims(args.shape)
    workers = args.threads or default_workers()
    spec = TruncationSpec(args.rmax, args.eps)
    profile = load_profile(args.profile)
    k = combined_modes(args.variant, dims, args, spec.r_max)
    X = random_tensor(dims, args.seed, split=len(dims) - k)
    counters = RunCounters()
    t0 = time.perf_counter()
    tt = run_variant(args.variant, X, spec, args, workers, counters)
    wall = time.perf_counter() - t0

    shape, rmax = format_shape(dims), format_rmax(spec.r_max)
    report = Report()
    report.extend(counter_rows(args.variant, shape, rmax, spec.eps, counters))
    report.rows.append(total_row(args.variant, shape, rmax, spec.eps, counters, wall, max(tt.ranks)))
    meta = report.meta
    meta.update({
        "command": "decompose", "variant": args.variant, "dims": list(dims), "seed": args.seed,
        "threads": workers, "combined_modes": k, "ranks": list(tt.ranks), "wall_seconds": wall,
        "counter_flops": counters.flops, "counter_bytes": counters.bytes,
        "model": model_summary(dims, tt.ranks, k, spec.r_max, profile),
    })
    ok = _verify(meta, X, tt, spec) if args.verify else True
    if args.tt_out:
        save_tt(tt, args.tt_out)
    emit_report(report, args.format, args.out)
    return 0 if ok else EXIT_NUMERICAL


def _copy_seconds(nbytes: int, repeats: int = 3) -> float:
    src = np.ones(max(nbytes // 8, 1))
    dst = np.empty_like(src)
    best = math.inf
    for _ in range(repeats):
        t = time.perf_counter()
        np.copyto(dst, src)
        best = min(best, time.perf_counter() - t)
    return best


def bandwidth_checks(meta: dict, nbytes: int, dims, seed: int, workers: int) -> None:
    """Informative TSQR bandwidth and thick-run checks against an in-process copy."""
    nbytes = max(nbytes, 32 * 2**20)
    t_copy = _copy_seconds(nbytes)
    copy_bw = 2 * nbytes / t_copy
    checks = {"copy_bytes": nbytes, "copy_seconds": t_copy, "copy_bandwidth": copy_bw, "tsqr": {}}
    rng = np.random.default_rng(seed)
    for m in (1, 2, 4, 8, 16):
        X = PaddedMatrix.from_array(rng.random((nbytes // (8 * m), m)))
        tsqr(X, workers=workers)
        best = math.inf
        for _ in range(3):
            t = time.perf_counter()
            tsqr(X, workers=workers)
            best = min(best, time.perf_counter() - t)
        bw = 8 * X.rows * m / best
        frac = bw / copy_bw
        checks["tsqr"][str(m)] = {"bandwidth": bw, "fraction_of_copy": frac}
        if frac < TSQR_COPY_FRACTION:
            _warn(meta, f"tsqr m={m}: {bw / 1e9:.2f} GB/s is {frac:.0%} of the copy baseline "
                        f"{copy_bw / 1e9:.2f} GB/s (target {TSQR_COPY_FRACTION:.0%})")
    # thick-bounds at r_max = 1 against one copy of the input
    k = choose_combined_dims(dims, ThickBoundsParams(), 1)[0]
    X = random_tensor(dims, seed, split=len(dims) - k)
    t_in = _copy_seconds(8 * X.size)
    spec = TruncationSpec(1, 0.0)
    tt_svd_thick_bounds(X, spec, workers=workers)
    best = math.inf
    for _ in range(2):
        t = time.perf_counter()
        tt_svd_thick_bounds(X, spec, workers=workers)
        best = min(best, time.perf_counter() - t)
    checks["thick_rmax1"] = {"seconds": best, "input_copy_seconds": t_in, "ratio": best / t_in}
    if best > THICK_COPY_MULTIPLE * t_in:
        _warn(meta, f"thick r_max=1 run takes {best / t_in:.1f}x the input copy time "
                    f"(target {THICK_COPY_MULTIPLE:g}x)")
    meta["checks"] = checks


def cmd_bench(args) -> int:
    dims = _tensor_dims(args.shape)
    if args.repeats < 2:
        raise UsageError("bench needs --repeats >= 2")
    variants = [v.strip() for v in args.variant.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad or not variants:
        raise UsageError(f"unknown variant(s) {bad}; choose from {', '.join(VARIANTS)}")
    workers = args.threads or default_workers()
    spec = TruncationSpec(args.rmax, args.eps)
    profile = load_profile(args.profile)
    shape, rmax = format_shape(dims), format_rmax(spec.r_max)
    report = Report()
    meta = report.meta
    meta.update({"command": "bench", "dims": list(dims), "seed": args.seed, "threads": workers,
                 "repeats": args.repeats, "keep_warmup": args.keep_warmup, "variants": {}})
    ok = True
    for variant in variants:
        k = combined_modes(variant, dims, args, spec.r_max)
        X = random_tensor(dims, args.seed, split=len(dims) - k)
        samples, first = [], None
        for rep in range(args.repeats):
            counters = RunCounters()
            t0 = time.perf_counter()
            tt = run_variant(variant, X, spec, args, workers, counters)
            wall = time.perf_counter() - t0
            if rep == 0 and not args.keep_warmup:
                continue
            samples.append(wall)
            if first is None:
                first = (counters, tt)
                report.extend(counter_rows(variant, shape, rmax, spec.eps, counters))
            report.rows.append(total_row(variant, shape, rmax, spec.eps, counters, wall,
                                         max(tt.ranks), phase="sample") | {"step": len(samples)})
        counters, tt = first
        t_min, t_med = min(samples), statistics.median(samples)
        for name, secs in (("min", t_min), ("median", t_med)):
            report.rows.append(total_row(variant, shape, rmax, spec.eps, counters, secs,
                                         max(tt.ranks), phase=name))
        info = {
            "samples": samples, "min_seconds": t_min, "median_seconds": t_med,
            "ranks": list(tt.ranks), "combined_modes": k,
            "counter_flops": counters.flops, "counter_bytes": counters.bytes,
            "gbytes_per_s": counters.bytes / t_min / 1e9, "gflops_per_s": counters.flops / t_min / 1e9,
            "model": model_summary(dims, tt.ranks, k, spec.r_max, profile),
        }
        meta["variants"][variant] = info
        if args.verify:
            ok = _verify(info, X, tt, spec) and ok
    if not args.no_checks:
        bandwidth_checks(meta, 8 * math.prod(dims), dims, args.seed, workers)
    emit_report(report, args.format, args.out)
    return 0 if ok else EXIT_NUMERICAL


def model_ranks(dims, r_max: int) -> tuple[int, ...]:
    """Generic ranks of a random tensor: ``min(r_max, left product, right product)``."""
    d = len(dims)
    return tuple(min(r_max, math.prod(dims[:i]), math.prod(dims[i:])) if 0 < i < d else 1
                 for i in range(d + 1))


def cmd_model(args) -> int:
    dims = parse_shape(args.shape)
    if len(dims) < 2:
        raise UsageError("the model needs at least two dimensions")
    profile = load_profile(args.profile)
    k = combined_modes(args.variant, dims, args, args.rmax)
    ranks = model_ranks(dims, args.rmax)
    plan, tot = perfmodel.per_step_model(dims, ranks, combine_plan=k, profile=profile)
    summary = model_summary(dims, ranks, k, args.rmax, profile)
    shape, rmax = format_shape(dims), format_rmax(args.rmax)

    if args.format != "text":
        report = Report(meta={"command": "model", "profile": profile.name, "ranks": list(ranks), **summary})
        for s in plan.steps:
            for name, c in (("tsqr", s.tsqr), ("tsmm", s.tsmm)):
                report.rows.append({"variant": args.variant, "shape": shape, "rmax": rmax, "eps": 0.0,
                                    "phase": name, "step": s.step, "seconds": c.t_min,
                                    "flops": round(c.n_flops), "bytes": round(c.v_bytes), "rank": s.rank})
        emit_report(report, args.format, args.out)
        return 0

    lines = [f"profile {profile.name}: P_max {profile.p_max / 1e9:g} GFlop/s, "
             f"load {profile.b_load / 1e9:g} GB/s, stream {profile.b_stream / 1e9:g} GB/s",
             f"shape {shape}  variant {args.variant}  r_max {rmax}  merged modes {k}",
             f"{'step':>4} {'kernel':>6} {'rows':>12} {'cols':>6} {'rank':>5} {'f':>7} "
             f"{'GFlop':>10} {'GByte':>10} {'I_c':>7} {'t_min[s]':>10}  bound"]
    for s in plan.steps:
        for name, c in (("tsqr", s.tsqr), ("tsmm", s.tsmm)):
            lines.append(f"{s.step:>4} {name:>6} {s.rows:>12} {s.cols:>6} {s.rank:>5} {s.f:>7.4f} "
                         f"{c.n_flops / 1e9:>10.4f} {c.v_bytes / 1e9:>10.4f} {c.i_c:>7.2f} "
                         f"{c.t_min:>10.4g}  {c.bound}")
    lines.append(f"total: {tot.n_flops / 1e9:.2f} GFlop, {tot.v_bytes / 1e9:.2f} GByte, "
                 f"t_min {tot.t_min:.4g} s, f_bar {plan.f_bar:.4g}")
    if "bound_bytes" in summary:
        txt = f"f_bar bound: {summary['bound_bytes'] / 1e9:.2f} GByte"
        if "bound_flops" in summary:
            txt += f", {summary['bound_flops'] / 1e9:.2f} GFlop"
        lines.append(txt)
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {"decompose": cmd_decompose, "bench": cmd_bench, "model": cmd_model}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"ttsvd: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (AllocationError, MemoryError) as e:
        print(f"ttsvd: memory error: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except ArithmeticError as e:
        print(f"ttsvd: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TTSVDError as e:
        print(f"ttsvd: shape error: {e}", file=sys.stderr)
        return EXIT_SHAPE


if __name__ == "__main__":
    sys.exit(main())
