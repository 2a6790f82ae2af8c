#!/usr/bin/env python3
"""Figures from porous-ensf CSV outputs.

    plotkit heatmap --in snapshot.csv --out fig.png [--field s|p|k] [--minus other.csv]
    plotkit rmse --in run1/rmse.csv run2/rmse.csv --out rmse.png
"""
import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RMSE_HEADER = ["step", "time", "rmse_s", "rmse_p", "rmse_u"]
RANGES = {"s": (0.0, 1.0), "k": (0.01, 4.0)}
# Stable PNG bytes across reruns.
PNG_META = {"Software": None}


class CsvError(Exception):
    pass


def read_rows(path, expected):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != expected:
        got = rows[0] if rows else []
        raise CsvError(f"{path}:1: expected header {','.join(expected)}, got {','.join(got)}")
    out = []
    for n, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(expected):
            raise CsvError(f"{path}:{n}: expected {len(expected)} columns, got {len(r)}")
        try:
            out.append([float(x) for x in r])
        except ValueError as e:
            raise CsvError(f"{path}:{n}: {e}") from None
    return np.array(out).reshape(-1, len(expected))


def read_field(path, field):
    header = ["i", "j", "k"] if field == "k" else ["i", "j", "s", "p"]
    a = read_rows(path, header)
    col = header.index(field)
    i, j = a[:, 0].astype(int), a[:, 1].astype(int)
    nx, ny = i.max() + 1, j.max() + 1
    if nx * ny != len(a):
        raise CsvError(f"{path}: {len(a)} cells do not fill a {nx}x{ny} grid")
    grid = np.zeros((ny, nx))
    grid[j, i] = a[:, col]
    return grid


def plot_heatmap(args):
    field = args.field
    values = read_field(args.input, field)
    title = f"{field} ({Path(args.input).parent.name})"
    vmin, vmax = RANGES.get(field, (None, None))
    if args.minus:
        other = read_field(args.minus, field)
        if other.shape != values.shape:
            raise CsvError(f"grid mismatch: {values.shape} vs {other.shape}")
        values = np.abs(values - other)
        title = f"|{field} error|"
        vmin, vmax = 0.0, None
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(values, origin="lower", extent=(0, 1, 0, 1), vmin=vmin, vmax=vmax, cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    fig.savefig(args.out, dpi=100, metadata=PNG_META)
    plt.close(fig)


def run_label(rmse_path):
    cfg = Path(rmse_path).parent / "config.txt"
    if cfg.exists():
        kv = dict(
            line.split("=", 1) for line in cfg.read_text().splitlines() if "=" in line and not line.startswith("#")
        )
        if "filter" in kv and "obs.fraction" in kv:
            return f"{kv['filter']} {float(kv['obs.fraction']) * 100:g}%"
    return Path(rmse_path).parent.name


def plot_rmse(args):
    runs = [(run_label(p), read_rows(p, RMSE_HEADER)) for p in args.input]
    steps = runs[0][1][:, 0]
    for p, (_, a) in zip(args.input, runs):
        if not np.array_equal(a[:, 0], steps):
            raise CsvError(f"{p}: step grid differs from {args.input[0]}")
    col = RMSE_HEADER.index(f"rmse_{args.variable}")
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, a in runs:
        ax.plot(a[:, 1], a[:, col], label=label)
    ax.set_xlabel("time")
    ax.set_ylabel(f"RMSE ({args.variable})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=100, metadata=PNG_META)
    plt.close(fig)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="plotkit")
    sub = ap.add_subparsers(dest="cmd", required=True)
    h = sub.add_parser("heatmap")
    h.add_argument("--in", dest="input", required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--field", choices=["s", "p", "k"], default="s")
    h.add_argument("--minus", help="second snapshot; plots the absolute difference")
    h.set_defaults(func=plot_heatmap)
    r = sub.add_parser("rmse")
    r.add_argument("--in", dest="input", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--variable", choices=["s", "p", "u"], default="s")
    r.set_defaults(func=plot_rmse)
    args = ap.parse_args(argv)
    try:
        args.func(args)
    except (CsvError, OSError) as e:
        print(f"plotkit: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
