"""Run artifacts: CSV tables, the JSON manifest and static SVG charts.

Floats are written with ``repr`` so a rerun with the same manifest
reproduces every CSV byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
from pathlib import Path

import numpy as np

from . import __version__


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(str(_cell(x)) for x in v)
    return v


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    cols = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_cell(row.get(c, "")) for c in cols])
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    """``manifest.json`` in the output directory, written before the run starts.

    Outputs are registered as they are written and carry a sha256 checksum;
    ``finish`` records the final status and exit code.
    """

    def __init__(self, outdir, experiment: str, config: dict):
        self.dir = Path(outdir)
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.dir}: {exc}") from exc
        if not os.access(self.dir, os.W_OK):
            raise OSError(f"output directory {self.dir} is not writable")
        self.path = self.dir / "manifest.json"
        self.data = {
            "experiment": experiment,
            "config": config,
            "seed": config.get("seed"),
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "status": "running",
            "files": {},
        }
        self.save()

    def save(self) -> None:
        write_json(self.path, self.data)

    def add(self, path) -> Path:
        path = Path(path)
        self.data["files"][path.name] = {"sha256": sha256(path), "bytes": path.stat().st_size}
        self.save()
        return path

    def csv(self, name: str, rows, columns=None) -> Path:
        return self.add(write_csv(self.dir / name, rows, columns))

    def json(self, name: str, obj) -> Path:
        return self.add(write_json(self.dir / name, obj))

    def note(self, key: str, value) -> None:
        self.data[key] = value
        self.save()

    def finish(self, status: str, exit_code: int) -> None:
        self.data["status"] = status
        self.data["exit_code"] = exit_code
        self.save()


# ---------------------------------------------------------------------------
# Charts
# ---------------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "lifonet"
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    _pyplot().close(fig)
    return Path(path)


def line_chart(path, x, ys: dict, xlabel: str, ylabel: str, title: str = "", logy: bool = False,
               bands: dict | None = None) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, y in ys.items():
        ax.plot(x, y, label=str(name), lw=1.2)
        if bands and name in bands:
            lo, hi = bands[name]
            ax.fill_between(x, lo, hi, alpha=0.2)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(ys) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
