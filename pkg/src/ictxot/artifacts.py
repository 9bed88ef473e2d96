"""Deterministic CSV/JSON emission, run manifests, gnuplot recipes."""

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, header, rows):
    """RFC 4180 (CRLF, minimal quoting), floats at 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(k, "") for k in header]
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _plain(o):
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return _plain(o.tolist())
    if isinstance(o, (np.floating, float)):
        o = float(o)
        return o if math.isfinite(o) else str(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def dumps(obj):
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def content_hash(obj):
    """git blob hash of the canonical JSON encoding."""
    data = json.dumps(_plain(obj), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    outputs: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        return content_hash(self.config)

    def to_dict(self):
        return {"command": self.command, "config": self.config, "seed": self.seed,
                "config_hash": self.config_hash, "outputs": self.outputs}

    def write(self, out_dir):
        path = os.path.join(out_dir, "manifest.json")
        write_json(path, self.to_dict())
        return path


def gnuplot_recipe(path, data_file, title, xlabel, ylabel, series, logscale=""):
    """Write a small gnuplot script; ``series`` is a list of (x_col, y_col, label)."""
    lines = [
        "set datafile separator ','",
        f"set title '{title}'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
    ]
    if logscale:
        lines.append(f"set logscale {logscale}")
    plots = [f"'{data_file}' using {x}:{y} skip 1 title '{label}'" for x, y, label in series]
    lines.append("plot " + ", \\\n     ".join(plots))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
