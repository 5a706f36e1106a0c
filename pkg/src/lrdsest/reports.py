"""Plain-text outputs: JSON reports, CSV tables, SVG figures.

Every file carries the package version and the effective configuration.
Nothing depends on the clock, so identical inputs give identical bytes.
"""

from __future__ import annotations

import io
import json
import math
from pathlib import Path

import numpy as np

from . import __version__

TOOL = f"lrdsest {__version__}"


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and map non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(payload: dict, config: dict) -> str:
    body = {"tool": TOOL, "config": config}
    body.update(payload)
    return json.dumps(jsonable(body), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, payload: dict, config: dict) -> None:
    Path(path).write_text(dumps(payload, config), encoding="utf-8", newline="\n")


def write_table(path, header, rows, config: dict) -> None:
    """CSV with a leading ``#`` comment line holding tool and config."""
    buf = io.StringIO()
    buf.write(f"# {TOOL} config={json.dumps(jsonable(config), sort_keys=True)}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_cell(v) for v in row) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else "nan"
    return str(v)


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "lrdsest"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def _save_svg(fig, plt, path, config: dict) -> None:
    meta = {
        "Creator": TOOL,
        "Date": None,
        "Description": json.dumps(jsonable(config), sort_keys=True),
    }
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)


def plot_profile(path, ks, s_profile, k_hat: int, config: dict) -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(ks, s_profile, lw=1.0)
    ax.axvline(k_hat, color="C3", ls="--", lw=0.8, label=f"k_hat = {k_hat}")
    ax.set_xlabel("split k")
    ax.set_ylabel("minimized scale s_n")
    ax.legend(loc="best")
    fig.tight_layout()
    _save_svg(fig, plt, path, config)


def plot_rates(path, report, config: dict) -> None:
    """Log-log medians against n with fitted and theoretical slopes."""
    from .experiments import SLOPE_METRICS

    plt = _figure()
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.5))
    ns = np.array(sorted(report.summaries), dtype=float)
    for ax, (name, metric) in zip(axes, SLOPE_METRICS.items()):
        med = np.array([report.summaries[int(n)][metric]["median"] if report.summaries[int(n)] else np.nan
                        for n in ns])
        pos = med > 0
        if pos.any():
            ax.loglog(ns[pos], med[pos], "o", label="median")
            anchor = ns[pos][0], med[pos][0]
            theo = report.theoretical[name]
            ax.loglog(ns, anchor[1] * (ns / anchor[0]) ** theo, ":", label=f"theory {theo:.2f}")
            sl = report.slopes.get(name)
            if sl is not None:
                ax.loglog(ns, np.exp(sl["intercept"]) * ns ** sl["slope"], "-",
                          label=f"fit {sl['slope']:.2f}")
        else:
            ax.text(0.5, 0.5, "all medians zero", transform=ax.transAxes, ha="center")
            ax.set_xscale("log")
        ax.set_title(metric)
        ax.set_xlabel("n")
        if pos.any():
            ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save_svg(fig, plt, path, config)
