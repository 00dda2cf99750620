"""Run reports: one row per (step, phase), written as CSV or JSON.

Run-level information that does not fit the row schema (ranks, errors,
warnings, model estimates) travels in ``meta``. JSON stores it as an object;
CSV stores it in leading ``#`` comment lines that readers skip.
"""
from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import dataclass, field

from .counters import RunCounters

FIELDS = ("variant", "shape", "rmax", "eps", "phase", "step", "seconds", "flops", "bytes", "rank")
_INT_FIELDS = ("step", "flops", "bytes", "rank")
_FLOAT_FIELDS = ("eps", "seconds")


@dataclass
class Report:
    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def extend(self, rows) -> None:
        self.rows.extend(rows)


def format_shape(dims) -> str:
    dims = tuple(int(n) for n in dims)
    if len(dims) > 1 and len(set(dims)) == 1:
        return f"{dims[0]}^{len(dims)}"
    return "x".join(str(n) for n in dims)


def format_rmax(r_max) -> str:
    from .small_dense import UNBOUNDED

    return "inf" if r_max is None or r_max == UNBOUNDED else str(int(r_max))


def counter_rows(variant: str, shape: str, rmax: str, eps: float, counters: RunCounters) -> list[dict]:
    """Rows for every (step, phase) cell of a run, in execution order."""
    rows = []
    for rec in counters.steps:
        for name, ph in rec.phases.items():
            rows.append({
                "variant": variant, "shape": shape, "rmax": rmax, "eps": float(eps),
                "phase": name, "step": rec.step, "seconds": ph.seconds,
                "flops": ph.flops, "bytes": ph.bytes,
                "rank": -1 if rec.rank is None else rec.rank,
            })
    return rows


def total_row(variant: str, shape: str, rmax: str, eps: float, counters: RunCounters,
              seconds: float, rank: int, phase: str = "total") -> dict:
    return {
        "variant": variant, "shape": shape, "rmax": rmax, "eps": float(eps),
        "phase": phase, "step": 0, "seconds": float(seconds),
        "flops": counters.flops, "bytes": counters.bytes, "rank": int(rank),
    }


def _typed(row: dict) -> dict:
    out = {}
    for k in FIELDS:
        v = row[k]
        if k in _INT_FIELDS:
            v = int(v)
        elif k in _FLOAT_FIELDS:
            v = float(v)
        else:
            v = str(v)
        out[k] = v
    return out


def _csv_value(v):
    # repr round-trips doubles exactly
    return repr(v) if isinstance(v, float) else v


def render(report: Report, fmt: str) -> str:
    if fmt == "json":
        payload = {"fields": list(FIELDS), "rows": [_typed(r) for r in report.rows], "meta": report.meta}
        return json.dumps(payload, indent=2, sort_keys=False, default=_json_default) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        for key, value in report.meta.items():
            buf.write(f"# {key}: {json.dumps(value, default=_json_default)}\n")
        w = csv.DictWriter(buf, fieldnames=FIELDS, lineterminator="\n")
        w.writeheader()
        for r in report.rows:
            w.writerow({k: _csv_value(v) for k, v in _typed(r).items()})
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


def _json_default(o):
    if hasattr(o, "item"):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def emit_report(report: Report, fmt: str, out=None) -> int:
    """Write ``report`` to the path or stream ``out`` (stdout by default); returns bytes written."""
    text = render(report, fmt)
    data = text.encode()
    if out is None or out == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    elif hasattr(out, "write"):
        out.write(text)
    else:
        with open(out, "wb") as fh:
            fh.write(data)
    return len(data)


def parse_report(text: str, fmt: str) -> Report:
    if fmt == "json":
        payload = json.loads(text)
        return Report([_typed(r) for r in payload.get("rows", [])], payload.get("meta", {}))
    if fmt == "csv":
        meta = {}
        body = []
        for line in text.splitlines(keepends=True):
            if line.startswith("# "):
                key, _, value = line[2:].partition(": ")
                meta[key] = json.loads(value)
            else:
                body.append(line)
        rows = [_typed(r) for r in csv.DictReader(io.StringIO("".join(body)))]
        return Report(rows, meta)
    raise ValueError(f"unknown report format {fmt!r}")
