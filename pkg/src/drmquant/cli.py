"""Command line front end.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from typing import Sequence

import numpy as np

from .errors import DataError, DrmError, NumericalError
from .estimation import check_level
from .inference import ElInference
from .model import BasisSpec, fit_mele
from .montecarlo import DESIGNS, load_design, run_experiment
from .report import fmt, ingest, render_metrics, render_table, write_records

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "basis": "1,x,log1p_abs,sqrt_abs",
    "levels": "0.05:0.95:0.05",
    "conf": "0.95",
    "format": "text",
    "design": "gamma50",
    "reps": None,
    "seed": None,
    "workers": "1",
    "out": None,
    "diff": None,
    "input": None,
    "output": None,
}


class UsageError(Exception):
    pass


def parse_levels(text: str) -> list[float]:
    """``"0.05:0.95:0.05"`` (inclusive range) or ``"0.05,0.5,0.95"``; empty gives []."""
    text = (text or "").strip()
    if not text:
        return []
    try:
        if ":" in text:
            lo, hi, step = (float(t) for t in text.split(":"))
            count = int(np.floor((hi - lo) / step + 1e-9)) + 1
            levels = [round(lo + i * step, 12) for i in range(count)]
        else:
            levels = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse levels {text!r}") from None
    for a in levels:
        if not 0 < a < 1:
            raise UsageError(f"level {a!r} outside (0, 1)")
    return levels


def read_config(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"bad config file {path}: {exc}") from None
    return {k.replace("-", "_"): v for k, v in cp["run"].items()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drmquant",
        description="Quantile estimation for several samples under a density ratio model.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="flat key = value file with option defaults")
        p.add_argument("--format", choices=("text", "csv"), default=None,
                       help="text tables or delimited records")
        p.add_argument("--output", "-o", default=None, help="write to file instead of stdout")
        if data:
            p.add_argument("--input", "-i", default=None,
                           help="delimited file with header sample_id,value")
            p.add_argument("--basis", default=None,
                           help="comma separated basis names, e.g. 1,x,log1p_abs,sqrt_abs")

    p = sub.add_parser("fit", help="fit the model and print the parameter estimates")
    common(p)
    p = sub.add_parser("quantile", help="EL (and optionally EM) quantiles")
    common(p)
    p.add_argument("--levels", default=None, help="e.g. 0.05:0.95:0.05 or 0.1,0.5,0.9")
    p.add_argument("--em", action="store_true", help="add empirical quantiles")
    p = sub.add_parser("ci", help="Wald intervals for quantiles and quantile differences")
    common(p)
    p.add_argument("--levels", default=None)
    p.add_argument("--conf", default=None, help="confidence level, default 0.95")
    p.add_argument("--diff", action="append", default=None, metavar="R,S",
                   help="add intervals for xi_R - xi_S (repeatable)")
    p = sub.add_parser("simulate", help="replicated simulation study")
    common(p, data=False)
    p.add_argument("--design", default=None,
                   help=f"one of {', '.join(DESIGNS)} or a JSON design file")
    p.add_argument("--reps", default=None)
    p.add_argument("--seed", default=None)
    p.add_argument("--workers", default=None)
    p.add_argument("--out", default=None, help="directory for metrics.csv and report.txt")
    return parser


def _resolve(args) -> dict:
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        opts.update(read_config(args.config))
    for k, v in vars(args).items():
        if v is not None:
            opts[k] = v
    return opts


def _emit(opts, text: str, records: list[dict], fields=("population", "level", "metric", "value")):
    stream = open(opts["output"], "w", encoding="utf-8", newline="") if opts.get("output") \
        else sys.stdout
    try:
        if opts["format"] == "csv":
            write_records(records, stream, fields)
        else:
            stream.write(text)
    finally:
        if stream is not sys.stdout:
            stream.close()


def _fit(opts):
    if not opts.get("input"):
        raise UsageError("--input is required")
    try:
        basis = BasisSpec.parse(opts["basis"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = ingest(opts["input"])
    return data, fit_mele(data, basis)


def cmd_fit(opts) -> None:
    data, fit = _fit(opts)
    names = fit.basis.names
    records, rows = [], []
    for r in range(1, data.m + 1):
        for j, nm in enumerate(names):
            v = fit.theta_hat[r - 1, j]
            records.append({"population": r, "level": "", "metric": f"theta[{nm}]", "value": v})
        rows.append([r] + list(fit.theta_hat[r - 1]))
    for k, v in (("loglik", fit.loglik), ("iterations", fit.iterations),
                 ("score_norm", fit.grad_norm)):
        records.append({"population": "", "level": "", "metric": k, "value": v})
    text = render_table(["population"] + [f"theta[{n}]" for n in names], rows,
                        f"MELE, basis ({fit.basis}), n_k = {data.n_k.tolist()}")
    text += f"loglik = {fmt(fit.loglik)}  iterations = {fit.iterations}  " \
            f"|score|_inf = {fmt(fit.grad_norm)}\n"
    _emit(opts, text, records)


def cmd_quantile(opts) -> None:
    data, fit = _fit(opts)
    levels = parse_levels(opts["levels"])
    inf = ElInference(fit)
    records, rows = [], []
    for r in range(data.m + 1):
        for a in levels:
            el = inf.quantile(r, a)
            records.append({"population": r, "level": a, "metric": "el_quantile", "value": el})
            row = [r, a, el]
            if opts.get("em"):
                em = inf.em_quantile(r, a)
                records.append({"population": r, "level": a, "metric": "em_quantile", "value": em})
                row.append(em)
            rows.append(row)
    heads = ["population", "level", "EL"] + (["EM"] if opts.get("em") else [])
    _emit(opts, render_table(heads, rows, "Quantile estimates"), records)


def _interval_records(label, a, el, em):
    out = []
    for prefix, iv in (("el", el), ("em", em)):
        for k in ("point", "lo", "hi", "variance"):
            out.append({"population": label, "level": a, "metric": f"{prefix}_{k}",
                        "value": getattr(iv, k)})
    return out


def cmd_ci(opts) -> None:
    data, fit = _fit(opts)
    levels = parse_levels(opts["levels"])
    try:
        conf = check_level(float(opts["conf"]))
    except ValueError:
        raise UsageError(f"bad confidence level {opts['conf']!r}") from None
    pairs = []
    for spec in opts.get("diff") or []:
        for item in ([spec] if isinstance(spec, str) else spec):
            try:
                r, s = (int(t) for t in item.split(","))
            except ValueError:
                raise UsageError(f"--diff expects R,S, got {item!r}") from None
            if not (0 <= r <= data.m and 0 <= s <= data.m) or r == s:
                raise UsageError(f"--diff {item!r}: need two distinct ids in 0..{data.m}")
            pairs.append((r, s))
    inf = ElInference(fit)
    records, rows = [], []
    for r in range(data.m + 1):
        for a in levels:
            el, em = inf.ci(r, a, conf), inf.em_ci(r, a, conf)
            records += _interval_records(r, a, el, em)
            rows.append([r, a, el.point, el.lo, el.hi, em.point, em.lo, em.hi])
    for r, s in pairs:
        for a in levels:
            el, em = inf.ci_diff((r, a), (s, a), conf), inf.em_ci_diff((r, a), (s, a), conf)
            records += _interval_records(f"{r}-{s}", a, el, em)
            rows.append([f"{r}-{s}", a, el.point, el.lo, el.hi, em.point, em.lo, em.hi])
    text = render_table(["target", "level", "EL", "EL lo", "EL hi", "EM", "EM lo", "EM hi"],
                        rows, f"{100 * conf:g}% confidence intervals")
    _emit(opts, text, records)


def cmd_simulate(opts) -> None:
    design = opts["design"]
    if design not in DESIGNS and not os.path.exists(design):
        raise UsageError(f"unknown design {design!r}")
    try:
        over = {k: int(opts[k]) if opts.get(k) is not None else None
                for k in ("reps", "seed", "workers")}
    except ValueError:
        raise UsageError("reps, seed and workers must be integers") from None
    config = load_design(design, **over)
    table = run_experiment(config)
    text = render_metrics(table)
    fields = ("section", "population", "level", "metric", "value")
    if opts.get("out"):
        os.makedirs(opts["out"], exist_ok=True)
        with open(os.path.join(opts["out"], "metrics.csv"), "w", encoding="utf-8",
                  newline="") as fh:
            write_records(table.records(), fh, fields)
        with open(os.path.join(opts["out"], "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
    _emit(opts, text, table.records(), fields)


COMMANDS = {"fit": cmd_fit, "quantile": cmd_quantile, "ci": cmd_ci, "simulate": cmd_simulate}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = _resolve(args)
        if opts["format"] not in ("text", "csv"):
            raise UsageError(f"unknown format {opts['format']!r}")
        COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"drmquant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"drmquant: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"drmquant: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DrmError as exc:
        print(f"drmquant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
