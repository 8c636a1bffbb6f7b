"""Side-by-side runs of OMF, SOMF and the non-averaged SOMF ablation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields, replace

from .driver import TRACE_COLUMNS, FactorizationConfig, OnlineFactorizer, RunTrace

VARIANTS = {
    "omf": {"algorithm": "omf"},
    "somf": {"algorithm": "somf"},
    "somf-no-averaging": {"algorithm": "somf", "no_averaging": True},
}


@dataclass
class BenchRow:
    variant: str
    reduction: float
    final_f_bar: float
    seconds: float
    touched_coords: int
    deferred_coords: int
    speedup_coords: float
    speedup_seconds: float


def variant_config(base: FactorizationConfig, variant: str) -> FactorizationConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return replace(base, **VARIANTS[variant]).validated()


def run_bench(X, base: FactorizationConfig, variants) -> tuple[list[BenchRow], dict[str, RunTrace]]:
    """Run each variant in turn on the same data and seed.

    Speed-ups are relative to ``omf`` when it is among the variants, else
    to the first one. Coordinate speed-ups are deterministic; wall-clock
    ones are informational.
    """
    variants = list(variants)
    if len(variants) < 2:
        raise ValueError("bench needs at least two variants")
    configs = {v: variant_config(base, v) for v in variants}
    traces = {}
    for v in variants:
        _, traces[v] = OnlineFactorizer(X, configs[v]).run()
    ref = traces["omf" if "omf" in traces else variants[0]].records[-1]
    rows = []
    for v in variants:
        last = traces[v].records[-1]
        rows.append(BenchRow(
            variant=v,
            reduction=configs[v].reduction,
            final_f_bar=last.f_bar,
            seconds=last.seconds,
            touched_coords=last.touched_coords,
            deferred_coords=traces[v].deferred_coords,
            speedup_coords=ref.touched_coords / last.touched_coords,
            speedup_seconds=ref.seconds / last.seconds if last.seconds > 0 else float("nan"),
        ))
    return rows, traces


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_report(rows: list[BenchRow], path):
    names = [f.name for f in fields(BenchRow)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in rows:
            writer.writerow([_fmt(getattr(row, n)) for n in names])


def write_curves(traces: dict[str, RunTrace], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("variant",) + TRACE_COLUMNS)
        for variant, trace in traces.items():
            for rec in trace.records:
                writer.writerow([variant] + [_fmt(getattr(rec, c)) for c in TRACE_COLUMNS])


def write_trace(trace: RunTrace, path, header: dict | None = None):
    """Write ``trace`` as CSV, preceded by ``# key: value`` comment lines."""
    with open(path, "w", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for rec in trace.records:
            writer.writerow([_fmt(getattr(rec, c)) for c in TRACE_COLUMNS])


def read_csv_table(path) -> tuple[dict, list[dict]]:
    """Parse a CSV written by this module; returns ``(header, rows)``."""
    header, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(": ")
                header[key] = value
            else:
                lines.append(line)
    reader = csv.DictReader(lines)
    rows = []
    for raw in reader:
        row = {}
        for key, value in raw.items():
            try:
                row[key] = int(value)
            except ValueError:
                try:
                    row[key] = float(value)
                except ValueError:
                    row[key] = value
        rows.append(row)
    return header, rows
