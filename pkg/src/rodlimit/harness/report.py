"""Output writers: table.csv, report.json, gnuplot-ready .dat files and PNG figures."""

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import config as config_mod


def _clean(obj):
    """JSON-safe copy (inf and nan become strings, numpy scalars become floats)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_table(table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "norm_name", "value"])
        for h, name, val in table.rows:
            w.writerow([repr(h), name, repr(val)])


def read_table(path):
    rows = []
    with open(path) as fh:
        for r in csv.DictReader(fh):
            rows.append((float(r["h"]), r["norm_name"], float(r["value"])))
    return rows


def write_dat(table, directory):
    """One file per norm: columns h, value."""
    out = []
    for name in table.names():
        hs, vals = table.series(name)
        p = Path(directory) / f"{name.replace('@', '_')}.dat"
        with open(p, "w") as fh:
            fh.write(f"# h {name}\n")
            for h, v in zip(hs, vals):
                fh.write(f"{h:.12e} {v:.12e}\n")
        out.append(p)
    return out


def write_series(series, directory):
    """Error time series per h: columns t, error_L2, error_strain_integral."""
    out = []
    for (h, suffix), s in series.items():
        p = Path(directory) / f"errors_h{h:g}{suffix.replace('@', '_')}.dat"
        with open(p, "w") as fh:
            fh.write("# t error_L2 error_strain_integral\n")
            for row in zip(s["t"], s["l2"], s["strain_int"]):
                fh.write(" ".join(f"{x:.12e}" for x in row) + "\n")
        out.append(p)
    return out


def plot_rates(table, names, path, title=""):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    drawn = False
    for n in names:
        hs, vals = table.series(n)
        ok = vals > 0
        if ok.sum() < 2:
            continue
        fit = table.slope(n)
        label = n if fit is None else f"{n} (slope {fit.slope:.2f})"
        ax.loglog(hs[ok], vals[ok], "o-", label=label)
        drawn = True
    if not drawn:
        plt.close(fig)
        return None
    ax.set_xlabel("h")
    ax.set_ylabel("value")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_series(series, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not series:
        return None
    fig, ax = plt.subplots(figsize=(5, 4))
    for (h, suffix), s in sorted(series.items(), key=lambda kv: -kv[0][0]):
        if np.any(np.asarray(s["l2"]) > 0):
            ax.semilogy(s["t"], s["l2"], label=f"h = {h:g}{suffix}")
    ax.set_xlabel("t")
    ax.set_ylabel("||u - u~||_L2")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_report(cfg, table, root=None, checks=None, series=None, figures=None, extra=None,
                 subdir=None):
    """Write everything under <root>/<digest>/[subdir] and return that directory."""
    d = config_mod.output_dir(cfg, root)
    if subdir:
        d = d / subdir
    d.mkdir(parents=True, exist_ok=True)
    table.digest = config_mod.digest(cfg)
    config_mod.write_config(cfg, d / "config.ini")
    write_table(table, d / "table.csv")
    write_dat(table, d)
    if series:
        write_series(series, d)
        plot_series(series, d / "errors.png")
    for fname, names in (figures or {}).items():
        plot_rates(table, names, d / fname)
    report = {
        "digest": table.digest,
        "slopes": table.slopes(),
        "failures": table.failures,
        "notes": table.notes,
        "checks": checks or {},
    }
    if extra:
        report.update(extra)
    with open(d / "report.json", "w") as fh:
        json.dump(_clean(report), fh, indent=2, sort_keys=True)
    return d
