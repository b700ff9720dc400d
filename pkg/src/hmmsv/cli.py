"""Command line surface: ingest return series, fit, search orders, decode,
predict, and simulate.

Machine-readable output (JSON or CSV) goes to --out or stdout; human-readable
summaries go to stderr. Parameter files use the JSON schema
{"k": ..., "h": ..., "sigma": [...], "early": [[[...]]], "pi": [[...]]} with
rows in lexicographic window order (most recent occasion fastest), so a fit's
output can be fed straight back to decode, predict, or simulate.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    ModelConfig,
    ObservationSeries,
    ParameterSet,
    simulate,
    validate,
)
from .estimator import EMSettings, FitResult, GridSearchResult, fit, grid_search
from .recursion import backward_pass, forward_joint_pass, local_decode, predict, state_marginals


class CLIError(Exception):
    """User-facing failure; printed as a diagnostic with a nonzero exit."""


@dataclass(frozen=True)
class RunConfig:
    """One parsed invocation."""

    command: str
    input: str | None = None
    column: str | None = None
    prices: bool = False
    h: int | None = None
    k: int | None = None
    h_list: tuple[int, ...] | None = None
    k_list: tuple[int, ...] | None = None
    starts: int = 10
    seed: int = 0
    max_iter: int = 1000
    tol: float = 1e-8
    params: str | None = None
    length: int | None = None
    out: str | None = None
    fmt: str = "json"


# ---------------------------------------------------------------------------
# ingestion

def _column_index(column, first_row: list[str]) -> tuple[int, bool]:
    """Resolve the column selector; returns (index, first_row_is_header)."""
    if column is not None:
        text = str(column).strip()
        try:
            idx = int(text)
        except ValueError:
            header = [c.strip() for c in first_row]
            if text not in header:
                raise CLIError(f"column {text!r} not found in header {header}")
            return header.index(text), True
        if idx < 0:
            raise CLIError(f"column index must be non-negative, got {idx}")
    else:
        if len(first_row) != 1:
            raise CLIError(
                f"file has {len(first_row)} columns; pass --column (0-based index or header name)"
            )
        idx = 0
    if idx >= len(first_row):
        return idx, False
    try:
        float(first_row[idx])
    except ValueError:
        return idx, True
    return idx, False


def ingest(path, column=None, prices: bool = False) -> ObservationSeries:
    """Load one numeric column from a CSV or plain-number file.

    With prices=True the column holds closing prices p_t and the series
    becomes the T - 1 percentage log-returns 100 ln(p_t / p_{t-1}).
    """
    p = Path(path)
    if not p.exists():
        raise CLIError(f"input file not found: {path}")
    with open(p, newline="") as fh:
        raw = list(csv.reader(fh))
    rows = [(i + 1, row) for i, row in enumerate(raw) if any(cell.strip() for cell in row)]
    if not rows:
        raise CLIError(f"input file is empty: {path}")

    idx, skip_first = _column_index(column, rows[0][1])
    if skip_first:
        rows = rows[1:]

    values: list[float] = []
    lines: list[int] = []
    bad: list[int] = []
    for line, row in rows:
        if idx >= len(row):
            bad.append(line)
            continue
        try:
            values.append(float(row[idx].strip()))
            lines.append(line)
        except ValueError:
            bad.append(line)
    if bad:
        raise CLIError(
            f"non-numeric or missing value in column {idx} at line(s) "
            + ", ".join(str(n) for n in bad)
        )
    if not values:
        raise CLIError(f"empty series: no data rows in {path}")

    arr = np.asarray(values, dtype=float)
    if prices:
        nonpos = [lines[i] for i in np.nonzero(~(arr > 0))[0]]
        if nonpos:
            raise CLIError(
                "prices must be positive; offending line(s) " + ", ".join(str(n) for n in nonpos)
            )
        if arr.size < 2:
            raise CLIError("empty series: need at least two prices to form returns")
        arr = 100.0 * np.log(arr[1:] / arr[:-1])
    return ObservationSeries(arr, label=str(path))


# ---------------------------------------------------------------------------
# parameter files and formatting

def _round10(x: float) -> float:
    return float(f"{float(x):.10g}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {key: _jsonable(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(val) for val in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round10(obj)
    return obj


def params_payload(config: ModelConfig, params: ParameterSet) -> dict:
    return {
        "k": config.k,
        "h": config.h,
        "sigma": params.sigma,
        "early": [table for table in params.early],
        "pi": params.pi,
    }


def _repair_rows(table: np.ndarray) -> np.ndarray:
    """Renormalize rows whose sums drifted by file rounding; leave real errors."""
    table = np.atleast_2d(np.asarray(table, dtype=float))
    sums = table.sum(axis=1, keepdims=True)
    fixable = (np.abs(sums - 1.0) <= 1e-6) & (sums > 0)
    return np.where(fixable, table / np.where(sums > 0, sums, 1.0), table)


def load_params(path) -> tuple[ModelConfig, ParameterSet]:
    """Read a parameter JSON (or a fit output, which embeds the same fields).

    Rows within 1e-6 of summing to one are renormalized to machine precision,
    absorbing the 10-significant-digit precision of written files; anything
    further off is rejected.
    """
    p = Path(path)
    if not p.exists():
        raise CLIError(f"parameter file not found: {path}")
    try:
        with open(p) as fh:
            data = json.load(fh)
        config = ModelConfig(k=int(data["k"]), h=int(data["h"]))
        params = ParameterSet(
            early=tuple(
                _repair_rows(np.asarray(tbl, dtype=float)) for tbl in data.get("early", [])
            ),
            pi=_repair_rows(np.asarray(data["pi"], dtype=float)),
            sigma=np.asarray(data["sigma"], dtype=float),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CLIError(f"cannot read parameter file {path}: {exc}") from exc
    problems = validate(params, config)
    if problems:
        raise CLIError(f"invalid parameters in {path}: " + "; ".join(problems))
    return config, params


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _json_text(payload: dict) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


def _csv_text(rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _fmt_cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{_round10(x):.10g}"
    return str(x)


def _kv_rows(payload: dict) -> list[list]:
    rows = [["key", "value"]]
    for key, val in payload.items():
        if isinstance(val, np.ndarray):
            val = val.tolist()
        if isinstance(val, (list, tuple)):
            rows.append([key, json.dumps(_jsonable(list(val)))])
        else:
            rows.append([key, _fmt_cell(val)])
    return rows


# ---------------------------------------------------------------------------
# commands

def _settings(cfg: RunConfig) -> EMSettings:
    return EMSettings(
        max_iterations=cfg.max_iter,
        rel_tolerance=cfg.tol,
        n_starts=cfg.starts,
        seed=cfg.seed,
    )


def _fit_payload(config: ModelConfig, result: FitResult, T: int) -> dict:
    payload = params_payload(config, result.params)
    payload.update(
        {
            "loglik": result.loglik,
            "npar": result.npar,
            "bic": result.bic,
            "trace": result.trace,
            "converged": result.converged,
            "start_index": result.start_index,
            "T": T,
        }
    )
    return payload


def _do_fit(cfg: RunConfig) -> str:
    series = ingest(cfg.input, cfg.column, cfg.prices)
    config = ModelConfig(k=cfg.k, h=cfg.h)
    result = fit(config, series, _settings(cfg))
    print(
        f"fit h={cfg.h} k={cfg.k}: loglik={result.loglik:.6g} npar={result.npar} "
        f"bic={result.bic:.6g} iterations={result.trace.size} converged={result.converged}",
        file=sys.stderr,
    )
    payload = _fit_payload(config, result, len(series))
    if cfg.fmt == "json":
        return _json_text(payload)
    return _csv_text(_kv_rows(payload))


def _grid_table(res: GridSearchResult, hs, ks) -> str:
    lines = []
    header = " " * 12 + "".join(f"{f'k={k}':>14}" for k in ks)
    blocks = [
        ("log-lik", lambda r: f"{r.loglik:.6g}"),
        ("#par", lambda r: str(r.npar)),
        ("BIC", lambda r: f"{r.bic:.6g}"),
    ]
    for name, render in blocks:
        lines.append(name)
        lines.append(header)
        for h in hs:
            cells = []
            for k in ks:
                cell = res.results.get((h, k))
                cells.append(f"{render(cell) if cell is not None else 'failed':>14}")
            lines.append(f"{f'h={h}':>12}" + "".join(cells))
    lines.append(f"selected: h={res.selected[0]}, k={res.selected[1]}")
    return "\n".join(lines)


def _do_grid(cfg: RunConfig) -> str:
    series = ingest(cfg.input, cfg.column, cfg.prices)
    res = grid_search(series, cfg.h_list, cfg.k_list, _settings(cfg))
    hs = sorted(set(cfg.h_list))
    ks = sorted(set(cfg.k_list))
    print(_grid_table(res, hs, ks), file=sys.stderr)
    cells = []
    for h in hs:
        for k in ks:
            cell = res.results.get((h, k))
            if cell is None:
                continue
            cells.append(
                {
                    "h": h,
                    "k": k,
                    "loglik": cell.loglik,
                    "npar": cell.npar,
                    "bic": cell.bic,
                    "converged": cell.converged,
                }
            )
    if cfg.fmt == "json":
        payload = {
            "cells": cells,
            "selected": {"h": res.selected[0], "k": res.selected[1]},
            "errors": [
                {"h": h, "k": k, "error": msg} for (h, k), msg in sorted(res.errors.items())
            ],
        }
        return _json_text(payload)
    rows = [["h", "k", "loglik", "npar", "bic", "converged", "selected"]]
    for cell in cells:
        rows.append(
            [
                cell["h"],
                cell["k"],
                _fmt_cell(cell["loglik"]),
                cell["npar"],
                _fmt_cell(cell["bic"]),
                cell["converged"],
                int((cell["h"], cell["k"]) == res.selected),
            ]
        )
    return _csv_text(rows)


def _do_decode(cfg: RunConfig) -> str:
    config, params = load_params(cfg.params)
    series = ingest(cfg.input, cfg.column, cfg.prices)
    slices = backward_pass(params, config, series)
    marginals = state_marginals(forward_joint_pass(slices, config))
    states = local_decode(marginals)
    print(
        f"decode: T={len(series)} states visited="
        + ",".join(str(s) for s in sorted(set(states.tolist()))),
        file=sys.stderr,
    )
    if cfg.fmt == "json":
        return _json_text({"states": states, "marginals": marginals})
    rows = [["t", "state"] + [f"q{v}" for v in range(1, config.k + 1)]]
    for t in range(len(series)):
        rows.append([t + 1, int(states[t])] + [_fmt_cell(x) for x in marginals[t]])
    return _csv_text(rows)


def _do_predict(cfg: RunConfig) -> str:
    config, params = load_params(cfg.params)
    series = ingest(cfg.input, cfg.column, cfg.prices)
    slices = backward_pass(params, config, series)
    pred = predict(params, config, slices)
    print(
        f"predict: next state {pred.next_state}, sigma {params.sigma[pred.next_state - 1]:.6g}",
        file=sys.stderr,
    )
    payload = {"next_state": pred.next_state, "weights": pred.weights, "sigma": pred.sigma}
    if cfg.fmt == "json":
        return _json_text(payload)
    return _csv_text(_kv_rows(payload))


def _do_simulate(cfg: RunConfig) -> str:
    config, params = load_params(cfg.params)
    states, series = simulate(config, params, cfg.length, cfg.seed)
    print(f"simulate: T={cfg.length} seed={cfg.seed}", file=sys.stderr)
    if cfg.fmt == "json":
        return _json_text({"states": states, "y": series.y})
    rows = [["t", "state", "y"]]
    for t in range(cfg.length):
        rows.append([t + 1, int(states[t]), _fmt_cell(series.y[t])])
    return _csv_text(rows)


_COMMANDS = {
    "fit": _do_fit,
    "grid": _do_grid,
    "decode": _do_decode,
    "predict": _do_predict,
    "simulate": _do_simulate,
}


def run(cfg: RunConfig) -> int:
    """Execute one parsed invocation; returns the process exit status."""
    try:
        text = _COMMANDS[cfg.command](cfg)
        _emit(text, cfg.out)
    except CLIError as exc:
        print(f"error: cli: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__module__.split('.')[-1]}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_input_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="CSV or plain-number file with the series")
    p.add_argument("--column", default=None, help="column selector: 0-based index or header name")
    p.add_argument(
        "--prices",
        action="store_true",
        help="treat the column as closing prices and convert to percentage log-returns",
    )


def _add_em_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--starts", type=int, default=10, help="number of EM starts (default 10)")
    p.add_argument("--seed", type=int, default=0, help="seed governing all randomness (default 0)")
    p.add_argument("--max-iter", type=int, default=1000, help="EM iteration cap (default 1000)")
    p.add_argument(
        "--tol", type=float, default=1e-8, help="relative log-likelihood tolerance (default 1e-8)"
    )


def _add_out_args(p: argparse.ArgumentParser, default_fmt: str = "json") -> None:
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", dest="fmt", choices=["json", "csv"], default=default_fmt)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmmsv",
        description="Discrete-volatility hidden Markov chains of arbitrary order: "
        "fit, order search, decoding, prediction, simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one (h, k) model by EM")
    _add_input_args(p_fit)
    p_fit.add_argument("--h", type=int, required=True, help="chain order (0 = independence)")
    p_fit.add_argument("--k", type=int, required=True, help="number of latent states")
    _add_em_args(p_fit)
    _add_out_args(p_fit)

    p_grid = sub.add_parser("grid", help="fit a grid of (h, k) models and select by BIC")
    _add_input_args(p_grid)
    p_grid.add_argument("--h-list", type=int, nargs="+", required=True, help="orders to try")
    p_grid.add_argument("--k-list", type=int, nargs="+", required=True, help="state counts to try")
    _add_em_args(p_grid)
    _add_out_args(p_grid)

    p_dec = sub.add_parser("decode", help="most probable state per occasion plus marginals")
    p_dec.add_argument("--params", required=True, help="parameter JSON (a fit output works)")
    _add_input_args(p_dec)
    _add_out_args(p_dec)

    p_pre = sub.add_parser("predict", help="one-step-ahead state and observation mixture")
    p_pre.add_argument("--params", required=True, help="parameter JSON (a fit output works)")
    _add_input_args(p_pre)
    _add_out_args(p_pre)

    p_sim = sub.add_parser("simulate", help="draw a latent path and observations")
    p_sim.add_argument("--params", required=True, help="parameter JSON (a fit output works)")
    p_sim.add_argument("--length", type=int, required=True, help="number of occasions to draw")
    p_sim.add_argument("--seed", type=int, default=0, help="seed governing all randomness")
    _add_out_args(p_sim, default_fmt="csv")

    return parser


def parse_args(argv=None) -> RunConfig:
    ns = build_parser().parse_args(argv)
    return RunConfig(
        command=ns.command,
        input=getattr(ns, "input", None),
        column=getattr(ns, "column", None),
        prices=getattr(ns, "prices", False),
        h=getattr(ns, "h", None),
        k=getattr(ns, "k", None),
        h_list=tuple(ns.h_list) if getattr(ns, "h_list", None) else None,
        k_list=tuple(ns.k_list) if getattr(ns, "k_list", None) else None,
        starts=getattr(ns, "starts", 10),
        seed=getattr(ns, "seed", 0),
        max_iter=getattr(ns, "max_iter", 1000),
        tol=getattr(ns, "tol", 1e-8),
        params=getattr(ns, "params", None),
        length=getattr(ns, "length", None),
        out=getattr(ns, "out", None),
        fmt=getattr(ns, "fmt", "json"),
    )


def main(argv=None) -> int:
    return run(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
