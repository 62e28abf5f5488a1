"""Reading multi-sample files and writing text tables and delimited records."""
from __future__ import annotations

import csv
import io
import math
from typing import Iterable, Sequence, TextIO

from .errors import EmptySample, MissingSample, ParseError
from .model import MultiSample

__all__ = [
    "ingest",
    "ingest_text",
    "emit_samples",
    "fmt",
    "write_records",
    "render_table",
    "render_metrics",
]

HEADER = ("sample_id", "value")
RECORD_FIELDS = ("population", "level", "metric", "value")


def ingest_text(stream: TextIO) -> MultiSample:
    """Parse ``sample_id,value`` rows; ids must cover 0..m without gaps."""
    reader = csv.reader(stream)
    groups: dict[int, list[float]] = {}
    header_seen = False
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        cells = [c.strip() for c in row]
        if not header_seen:
            if tuple(c.lower() for c in cells) != HEADER:
                raise ParseError(lineno, f"expected header 'sample_id,value', got {row!r}")
            header_seen = True
            continue
        if len(cells) != 2:
            raise ParseError(lineno, f"expected 2 fields, got {len(cells)}")
        try:
            sid = int(cells[0])
        except ValueError:
            raise ParseError(lineno, f"sample id {cells[0]!r} is not an integer") from None
        if sid < 0:
            raise ParseError(lineno, f"negative sample id {sid}")
        try:
            val = float(cells[1])
        except ValueError:
            raise ParseError(lineno, f"value {cells[1]!r} is not numeric") from None
        if not math.isfinite(val):
            raise ParseError(lineno, f"value {cells[1]!r} is not finite")
        groups.setdefault(sid, []).append(val)
    if not header_seen:
        raise ParseError(1, "missing header 'sample_id,value'")
    if not groups:
        raise EmptySample("no observations")
    top = max(groups)
    for k in range(top + 1):
        if k not in groups:
            raise MissingSample(k)
    if top < 1:
        raise MissingSample(1)
    return MultiSample([groups[k] for k in range(top + 1)])


def ingest(path: str) -> MultiSample:
    with open(path, newline="", encoding="utf-8") as fh:
        return ingest_text(fh)


def emit_samples(data: MultiSample, stream: TextIO) -> None:
    """Write ``data`` in the ingest format; values use shortest round-trip repr."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(HEADER)
    for k, s in enumerate(data.samples):
        for v in s:
            w.writerow((k, repr(float(v))))


def fmt(v) -> str:
    """Numbers with 6 significant digits; everything else via str."""
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (int, float)) or hasattr(v, "dtype"):
        return f"{float(v):.6g}"
    return str(v)


def write_records(records: Iterable[dict], stream: TextIO,
                  fields: Sequence[str] = RECORD_FIELDS) -> int:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(fields)
    count = 0
    for rec in records:
        w.writerow([fmt(rec[f]) for f in fields])
        count += 1
    return count


def render_table(headers: Sequence[str], rows: Sequence[Sequence], title: str = "") -> str:
    cells = [[fmt(c) for c in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in cells:
        for i, c in enumerate(row):
            widths[i] = max(widths[i], len(c))
    out = io.StringIO()
    if title:
        out.write(title + "\n")
    line = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    out.write(line + "\n" + "-" * len(line) + "\n")
    for row in cells:
        out.write("  ".join(c.rjust(w) for c, w in zip(row, widths)) + "\n")
    return out.getvalue()


def _get(cell, key):
    return cell.get(key, float("nan"))


def render_metrics(table) -> str:
    """Text tables laid out like the CDF, quantile, mse and interval tables."""
    cfg = table.config
    pops = cfg.populations
    levels = cfg.levels
    parts = [f"design={cfg.name} basis=({cfg.basis}) n_k={cfg.n_k} reps={cfg.reps} "
             f"seed={cfg.seed} successful={table.n_success} failed={len(table.failures)}\n"]
    if not table.cells:
        return parts[0]

    rows = []
    for r, p in enumerate(pops):
        for a in levels:
            c = table.cells[(r, a)]
            rows.append([p.label, a, _get(c, "cdf_asym_var_el"), _get(c, "cdf_asym_ratio"),
                         c["cdf_var_ratio"], c["cdf_est_ratio"], c["cdf_bias_el"],
                         c["cdf_bias_em"]])
    parts.append(render_table(
        ["population", "alpha", "asym_var(G_el)", "asym_ratio", "var(G_em)/var(G_el)",
         "est/var(G_el)", "B(G_el)%", "B(G_em)%"], rows, "EL and EM distribution estimates"))

    rows = []
    for r, p in enumerate(pops):
        for a in levels:
            c = table.cells[(r, a)]
            rows.append([p.label, a, c["xi"], _get(c, "asym_var_el"), c["var_el"],
                         c["est_var_el"], c["var_ratio"], c["bias_el"], c["bias_em"]])
    parts.append(render_table(
        ["population", "alpha", "xi", "asym_var(EL)", "var(EL)", "est_var(EL)",
         "var(EM)/var(EL)", "B(EL)%", "B(EM)%"], rows, "EL and EM quantiles"))

    rows = []
    for r, p in enumerate(pops):
        for a in levels:
            c = table.cells[(r, a)]
            rows.append([p.label, a, c["xi"], c["mse_el"], c["mse_ratio"], c["est_mse_ratio"],
                         c["bias_el"], c["bias_em"]])
    parts.append(render_table(
        ["population", "alpha", "xi", "mse(EL)", "mse(EM)/mse(EL)", "est_var/mse(EL)",
         "B(EL)%", "B(EM)%"], rows, "Mean squared errors"))

    heads = ["target", "stat"] + [f"EL {a:g}" for a in levels] + [f"EM {a:g}" for a in levels]
    rows = []
    for r, p in enumerate(pops):
        cs = [table.cells[(r, a)] for a in levels]
        rows.append([p.label, "length"] + [c["el_length"] for c in cs] + [c["em_length"] for c in cs])
        rows.append(["", "coverage"] + [c["el_coverage"] for c in cs] + [c["em_coverage"] for c in cs])
    for i in range(len(pops) - 1):
        cs = [table.diff_cells[(i, a)] for a in levels]
        label = f"{pops[0].label}-{pops[i + 1].label}"
        rows.append([label, "length"] + [c["el_length"] for c in cs] + [c["em_length"] for c in cs])
        rows.append(["", "coverage"] + [c["el_coverage"] for c in cs] + [c["em_coverage"] for c in cs])
    parts.append(render_table(heads, rows,
                              f"Confidence intervals, nominal {100 * cfg.conf_level:g}%"))
    return "\n".join(parts)
