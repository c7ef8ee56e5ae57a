"""Render convergence-study CSV files into figures and a markdown summary.

Consumes only the published CSV contract of the solver CLI (16 columns:
level, n, h, dt, seven error norms, five order columns).  For every error
column a log-log figure is written with reference slopes k and k+1; the
summary lists recomputed observed orders next to the CSV's own order
columns and marks the judged columns pass/fail against the study's
thresholds.
"""

import argparse
import csv
import math
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

EXPECTED_HEADER = [
    "level", "n", "h", "dt",
    "err_u_linf_h1", "err_u_linf_l2", "err_th_linf_h1", "err_th_linf_l2",
    "err_p_l2l2", "err_dtu_l2l2", "err_dtth_l2l2",
    "ord_u_h1", "ord_u_l2", "ord_th_h1", "ord_th_l2", "ord_p_l2",
]

ERROR_COLUMNS = EXPECTED_HEADER[4:11]

ORDER_PAIRS = {
    "ord_u_h1": "err_u_linf_h1",
    "ord_u_l2": "err_u_linf_l2",
    "ord_th_h1": "err_th_linf_h1",
    "ord_th_l2": "err_th_linf_l2",
    "ord_p_l2": "err_p_l2l2",
}

# judged columns and pass thresholds per (study, k)
THRESHOLDS = {
    ("h1", 1): {"err_u_linf_h1": 0.9, "err_th_linf_h1": 0.9},
    ("h1", 2): {"err_u_linf_h1": 1.8, "err_th_linf_h1": 1.8,
                "err_p_l2l2": 1.8},
    ("l2", 1): {"err_u_linf_l2": 1.8, "err_th_linf_l2": 1.8},
    ("l2", 2): {"err_u_linf_l2": 2.6, "err_th_linf_l2": 2.6},
}


class ReportError(Exception):
    """Malformed input; the message carries the offending location."""


class Table:
    def __init__(self, path, rows):
        self.path = path
        self.rows = rows

    def column(self, name):
        return np.array([row[name] for row in self.rows])

    def order_column(self, name):
        return [row[name] for row in self.rows[1:]]


def read_table(path):
    """Parse one CSV, validating the contract; raises ReportError."""
    try:
        with open(path, newline="") as fh:
            reader = list(csv.reader(fh))
    except OSError as exc:
        raise ReportError(f"{path}: cannot read: {exc}") from exc
    if not reader:
        raise ReportError(f"{path}:1: empty file")
    header = reader[0]
    if header != EXPECTED_HEADER:
        missing = [c for c in EXPECTED_HEADER if c not in header]
        if missing:
            raise ReportError(
                f"{path}:1: missing column(s) {', '.join(missing)}")
        raise ReportError(f"{path}:1: unexpected header ordering")
    rows = []
    for lineno, raw in enumerate(reader[1:], start=2):
        if len(raw) != len(EXPECTED_HEADER):
            raise ReportError(f"{path}:{lineno}: expected "
                              f"{len(EXPECTED_HEADER)} cells, got {len(raw)}")
        row = {}
        for name, cell in zip(EXPECTED_HEADER, raw):
            if name.startswith("ord_"):
                if cell == "":
                    row[name] = None
                    continue
            elif cell == "":
                raise ReportError(f"{path}:{lineno}: empty cell in {name}")
            try:
                row[name] = int(cell) if name in ("level", "n") else float(cell)
            except ValueError as exc:
                raise ReportError(
                    f"{path}:{lineno}: cannot parse {name}={cell!r}") from exc
        rows.append(row)
    if not rows:
        raise ReportError(f"{path}:2: no data rows")
    first_orders = [rows[0][name] for name in ORDER_PAIRS]
    if any(v is not None for v in first_orders):
        raise ReportError(f"{path}:2: order cells must be empty on the "
                          "first row")
    return Table(path, rows)


def recompute_orders(table, column):
    errs = table.column(column)
    out = []
    for a, b in zip(errs[:-1], errs[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else float("nan"))
    return out


def check_order_columns(table, tol=1e-10):
    """Cross-check the CSV's ord_* cells against recomputed slopes."""
    worst = 0.0
    for ord_name, err_name in ORDER_PAIRS.items():
        recomputed = recompute_orders(table, err_name)
        stored = table.order_column(ord_name)
        for i, (a, b) in enumerate(zip(recomputed, stored)):
            if b is None:
                raise ReportError(f"{table.path}: row {i + 3}: missing "
                                  f"{ord_name}")
            worst = max(worst, abs(a - b))
    if worst > tol:
        raise ReportError(f"{table.path}: stored order columns deviate from "
                          f"recomputed slopes by {worst:.3e} (> {tol:g})")
    return worst


def spatial_axis(table):
    """Plot against h, unless the study kept the mesh fixed (temporal)."""
    h = table.column("h")
    if np.all(h == h[0]):
        return table.column("dt"), "dt"
    return h, "h"


def plot_error_column(table, column, k, out_dir):
    x, xlabel = spatial_axis(table)
    y = table.column(column)
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    ax.loglog(x, y, "o-", label=column)
    # reference slopes anchored at the finest point
    for slope, style in ((k, "--"), (k + 1, ":")):
        ref = y[-1] * (x / x[-1]) ** slope
        ax.loglog(x, ref, style, color="gray",
                  label=f"slope {slope}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("error")
    ax.set_title(column)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    base = os.path.splitext(os.path.basename(table.path))[0]
    out = os.path.join(out_dir, f"{base}_{column}.png")
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def summarize_table(table, k, study, lines):
    judged = THRESHOLDS.get((study, k), {})
    lines.append(f"## {os.path.basename(table.path)}")
    lines.append("")
    lines.append(f"levels: {len(table.rows)}, element pair k={k}, "
                 f"study type: {study}")
    lines.append("")
    lines.append("| column | finest error | observed order | nominal | "
                 "threshold | verdict |")
    lines.append("|---|---|---|---|---|---|")
    all_pass = True
    for column in ERROR_COLUMNS:
        orders = recompute_orders(table, column)
        observed = orders[-1] if orders else float("nan")
        finest = table.column(column)[-1]
        if column in judged:
            threshold = judged[column]
            nominal = k if "h1" in column or study == "h1" else k + 1
            ok = observed >= threshold
            all_pass = all_pass and ok
            verdict = "PASS" if ok else "FAIL"
            lines.append(f"| {column} | {finest:.6e} | {observed:.4f} | "
                         f"{nominal} | >= {threshold} | {verdict} |")
        else:
            lines.append(f"| {column} | {finest:.6e} | {observed:.4f} | "
                         f"- | - | info |")
    lines.append("")
    return all_pass


def plot_convergence(csv_paths, out_dir, k, study):
    """Figures plus summary.md for a batch of study CSVs.

    Returns (figure paths, per-file pass flags, summary path).
    """
    os.makedirs(out_dir, exist_ok=True)
    figures = []
    flags = {}
    lines = ["# Convergence report", ""]
    for path in csv_paths:
        table = read_table(path)
        deviation = check_order_columns(table)
        for column in ERROR_COLUMNS:
            figures.append(plot_error_column(table, column, k, out_dir))
        ok = summarize_table(table, k, study, lines)
        flags[path] = ok
        lines.append(f"order-column cross-check: max deviation "
                     f"{deviation:.3e} (tolerance 1e-10)")
        lines.append("")
    summary = os.path.join(out_dir, "summary.md")
    with open(summary, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return figures, flags, summary


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="convreport",
        description="Render convergence CSVs into log-log figures and a "
                    "markdown summary.")
    parser.add_argument("csv", nargs="+", help="study CSV file(s)")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--k", type=int, choices=(1, 2), required=True,
                        help="element pair the study used")
    parser.add_argument("--study", choices=("h1", "l2", "temporal"),
                        default="h1", help="which thresholds to judge by")
    args = parser.parse_args(argv)
    try:
        figures, flags, summary = plot_convergence(args.csv, args.out_dir,
                                                   args.k, args.study)
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(figures)} figures and {summary}")
    for path, ok in flags.items():
        print(f"{os.path.basename(path)}: "
              f"{'all judged orders PASS' if ok else 'some orders FAIL'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
