"""Output writers: trace CSVs, summary JSON and static SVG charts."""
import csv
import io
import json
import math
from pathlib import Path

import numpy as np


def write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    write_text(path, dumps(obj))


def read_csv(path):
    """Return ``(header, columns)``; numeric columns become float arrays, others stay strings."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    cols = {}
    for i, h in enumerate(header):
        raw = [r[i] for r in body]
        try:
            cols[h] = np.array([float(v) for v in raw])
        except ValueError:
            cols[h] = raw
    return header, cols


def table_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def plot_csvs(paths, out, x="step", metrics=None, logx=False, logy=False, title=None):
    """Line chart of ``metrics`` against ``x`` for every CSV, saved as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.fonttype"] = "path"
    matplotlib.rcParams["svg.hashsalt"] = "byzsim"
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for path in paths:
        header, cols = read_csv(path)
        if x not in cols:
            raise ValueError(f"{path} has no column {x!r}")
        names = metrics or [h for h in header if h not in (x, "alpha") and isinstance(cols[h], np.ndarray)]
        for m in names:
            if m not in cols:
                raise ValueError(f"{path} has no column {m!r}")
            xs, ys = cols[x], cols[m]
            if not (isinstance(xs, np.ndarray) and isinstance(ys, np.ndarray)):
                raise ValueError(f"{path}: columns {x!r} and {m!r} must be numeric")
            keep = np.isfinite(ys)
            if logx:
                keep &= xs > 0
            if logy:
                keep &= ys > 0
            label = m if len(paths) == 1 else f"{Path(path).parent.name or Path(path).stem}:{m}"
            ax.plot(xs[keep], ys[keep], label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(x)
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
