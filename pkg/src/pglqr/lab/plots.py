"""SVG rendering of experiment CSVs.

Plots are produced from CSV files only.  Output bytes are deterministic for
identical input: the SVG hash salt is fixed and date metadata is stripped.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from pglqr.lab.experiments import CURVE_COLUMNS, CURVES_SCHEMA, SCATTER_COLUMNS, SCATTER_SCHEMA, SWEEP_COLUMNS, SWEEP_SCHEMA

_SCHEMAS = {SWEEP_SCHEMA: SWEEP_COLUMNS, SCATTER_SCHEMA: SCATTER_COLUMNS, CURVES_SCHEMA: CURVE_COLUMNS}
_INT_FIELDS = {"iteration": int, "n": int, "m": int, "horizon": int, "problem": int, "runs": int}


class CsvSchemaError(ValueError):
    pass


def _parse_value(name: str, text: str, lineno: int):
    if name in ("flagged", "diverged"):
        if text not in ("true", "false"):
            raise CsvSchemaError(f"line {lineno}, column {name!r}: expected true/false, got {text!r}")
        return text == "true"
    try:
        return _INT_FIELDS.get(name, float)(text)
    except ValueError:
        raise CsvSchemaError(f"line {lineno}, column {name!r}: cannot parse {text!r}") from None


def read_experiment_csv(path) -> tuple[str, str, list[dict]]:
    """Parse an experiment CSV into ``(schema, experiment, rows)``."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise CsvSchemaError(f"{path}: empty file")
    head = lines[0]
    if not head.startswith("# "):
        raise CsvSchemaError("line 1: missing '# schema=...' header")
    meta = dict(part.split("=", 1) for part in head[2:].split() if "=" in part)
    schema = meta.get("schema")
    if schema not in _SCHEMAS:
        raise CsvSchemaError(f"line 1: unknown schema {schema!r}")
    columns = _SCHEMAS[schema]
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header != columns:
        raise CsvSchemaError(f"line 2: expected columns {columns}, got {header}")
    rows = []
    for lineno, record in enumerate(reader, start=3):
        if len(record) != len(columns):
            raise CsvSchemaError(f"line {lineno}: expected {len(columns)} fields, got {len(record)}")
        rows.append({c: _parse_value(c, v, lineno) for c, v in zip(columns, record)})
    if not rows:
        raise CsvSchemaError(f"{path}: no data rows")
    return schema, meta.get("experiment", ""), rows


def _positive(values):
    return [v if (math.isfinite(v) and v > 0) else math.nan for v in values]


def _sweep_figure(rows, experiment, log_y):
    fig, axes = plt.subplots(2, 1, figsize=(5, 7), sharex=True)
    for scale in sorted({r["scale"] for r in rows}):
        sub = sorted((r for r in rows if r["scale"] == scale), key=lambda r: r["sweep_value"])
        x = [r["sweep_value"] for r in sub]
        axes[0].plot(x, _positive([r["bound_mean"] for r in sub]), marker="o", ms=3, label=f"scale {scale:g}")
        axes[1].plot(x, _positive([r["empirical_nu_mean"] for r in sub]), marker="o", ms=3, label=f"scale {scale:g}")
    xlabel = {"sigma_a": "sigma_a", "b_mag": "b", "rho": "rho(A + BK)"}.get(experiment, "sweep value")
    axes[0].set_ylabel("upper bound")
    axes[1].set_ylabel("empirical variance")
    axes[1].set_xlabel(xlabel)
    for ax in axes:
        if experiment != "rho":
            ax.set_xscale("log")
        if log_y:
            ax.set_yscale("log")
        ax.legend(fontsize=7)
    return fig


def _scatter_figure(rows):
    fig, ax = plt.subplots(figsize=(5, 5))
    ok = [r for r in rows if not r["flagged"]]
    for n in sorted({r["n"] for r in ok}):
        sub = [r for r in ok if r["n"] == n]
        ax.scatter([r["empirical_second_moment_mean"] for r in sub], [r["bound_mean"] for r in sub], s=8,
                   label=f"n = {n}")
    vals = [v for r in ok for v in (r["empirical_second_moment_mean"], r["bound_mean"]) if v > 0]
    if vals:
        lo, hi = min(vals), max(vals)
        ax.plot([lo, hi], [lo, hi], color="black", lw=0.8, ls="--", label="bound = empirical")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("empirical E[tr(g'g)]")
    ax.set_ylabel("upper bound")
    ax.legend(fontsize=7)
    return fig


def _curves_figure(rows):
    sa_values = sorted({r["sigma_a_scale"] for r in rows})
    ss_values = sorted({r["sigma_s_scale"] for r in rows})
    fig, axes = plt.subplots(1, len(ss_values), figsize=(4.5 * len(ss_values), 4), squeeze=False, sharey=True)
    for ax, ss in zip(axes[0], ss_values):
        for sa in sa_values:
            sub = sorted((r for r in rows if r["sigma_a_scale"] == sa and r["sigma_s_scale"] == ss),
                         key=lambda r: r["iteration"])
            if not sub:
                continue
            it = [r["iteration"] for r in sub]
            mean = [r["eval_return_mean"] for r in sub]
            std = [r["eval_return_std"] for r in sub]
            (line,) = ax.plot(it, mean, label=f"sigma_a {sa:g}")
            ax.fill_between(it, [m - s for m, s in zip(mean, std)], [m + s for m, s in zip(mean, std)],
                            color=line.get_color(), alpha=0.2, lw=0)
        ax.set_title(f"sigma_s {ss:g}")
        ax.set_xlabel("iteration")
        ax.legend(fontsize=7)
    axes[0][0].set_ylabel("noise-free return")
    return fig


def render_plots(csv_path, out_path=None, *, log_y: bool = True) -> Path:
    """Render one SVG for an experiment CSV; returns the written path."""
    schema, experiment, rows = read_experiment_csv(csv_path)
    out = Path(out_path) if out_path else Path(csv_path).with_suffix(".svg")
    with plt.rc_context({"svg.hashsalt": "pglqr", "svg.fonttype": "path"}):
        if schema == SWEEP_SCHEMA:
            fig = _sweep_figure(rows, experiment, log_y)
        elif schema == SCATTER_SCHEMA:
            fig = _scatter_figure(rows)
        else:
            fig = _curves_figure(rows)
        fig.tight_layout()
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out
