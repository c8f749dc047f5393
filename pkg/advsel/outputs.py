"""
File outputs: CSV tables and JSON documents.

Every float is written with repr(), so it reads back to the same double, and
every line ends in LF. Column order is fixed per table; see docs/outputs.md.
"""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return repr(v)
    if value is None:
        return ""
    return str(value)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv(path):
    """Rows of a CSV written by write_csv, as dicts of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_trajectory(path, trajectory):
    """t, rho, then one rho_<k> column per compartment."""
    k = trajectory.parts.shape[1]
    header = ["t", "rho"] + [f"rho_{j}" for j in range(k)]
    rows = ([t, rho, *parts] for t, rho, parts in zip(trajectory.times, trajectory.rho, trajectory.parts))
    return write_csv(path, header, rows)


def write_density(path, xs, values):
    return write_csv(path, ["x", "n"], zip(xs, values))


def write_profile(path, profile):
    return write_csv(path, ["x", "n_bar"], zip(profile.xs, profile.values))


def write_carrying(path, table):
    return write_csv(path, ["t", "log_S", "R"], zip(table.times, table.log_S, table.R))


def write_characteristic(path, times, positions, log_jacobians):
    rows = ((t, x, math.exp(lj), lj) for t, x, lj in zip(times, positions, log_jacobians))
    return write_csv(path, ["t", "x", "jacobian", "log_jacobian"], rows)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return v
    return value


def dumps(data):
    return json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n"


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(dumps(data))
    return path


def versions():
    import pyparsing
    import scipy
    import yaml

    from . import __version__

    return {
        "advsel": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
        "pyparsing": pyparsing.__version__,
    }


@dataclass
class RunManifest:
    """What a command ran with and what it wrote."""

    command: str
    config: dict
    numerics: dict
    outputs: list = field(default_factory=list)
    wall_clock: float = 0.0
    versions: dict = field(default_factory=versions)

    def add(self, path):
        self.outputs.append(str(path))

    def to_dict(self):
        return {
            "command": self.command,
            "config": self.config,
            "numerics": self.numerics,
            "outputs": list(self.outputs),
            "wall_clock": self.wall_clock,
            "versions": self.versions,
        }

    def write(self, path):
        return write_json(path, self.to_dict())
