"""Run records and their on-disk forms.

Each run writes to ``output_dir``:

* ``<experiment>.csv``: one row per sweep point.  The first line is a
  ``# config_hash: ...`` comment, the second the column header.
* ``<experiment>_<series>.csv``: extra plot-ready series (spectra, ...).
* ``summary.json``: ``{experiment, config_hash, n_points, aggregates, version}``.
* ``run_record.json``: config snapshot, per-point results, failures, wall time.

Everything except ``wall_time_s`` is a pure function of the config.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .. import __version__


def fmt(value) -> str:
    """Stable text for a CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return f"{value:.10g}"
    return str(value)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


@dataclass
class Table:
    columns: Tuple[str, ...]
    rows: List[dict] = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def where(self, **match) -> "Table":
        return Table(self.columns, [r for r in self.rows
                                    if all(r[k] == v for k, v in match.items())])


@dataclass
class RunRecord:
    experiment: str
    config: dict
    config_hash: str
    table: Table
    aggregates: dict = field(default_factory=dict)
    series: Dict[str, Table] = field(default_factory=dict)
    failures: List[dict] = field(default_factory=list)
    wall_time_s: float = 0.0
    version: str = __version__

    @property
    def n_points(self) -> int:
        return len(self.table.rows)

    def summary(self) -> dict:
        return _jsonable({
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "n_points": self.n_points,
            "aggregates": self.aggregates,
            "version": self.version,
        })

    def to_json(self) -> dict:
        return _jsonable({
            "experiment": self.experiment,
            "version": self.version,
            "config_hash": self.config_hash,
            "config": self.config,
            "columns": list(self.table.columns),
            "points": self.table.rows,
            "aggregates": self.aggregates,
            "failures": self.failures,
            "wall_time_s": self.wall_time_s,
        })


def write_csv(path, table: Table, config_hash: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([fmt(row[c]) for c in table.columns])


def read_csv(path) -> Tuple[str, Table]:
    """Inverse of ``write_csv``; values come back as strings."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# config_hash:"):
            raise ValueError(f"{path}: missing config_hash line")
        reader = csv.reader(fh)
        header = next(reader)
        rows = [dict(zip(header, r)) for r in reader]
    return first.split(":", 1)[1].strip(), Table(tuple(header), rows)


def write_record(record: RunRecord, out_dir, svg: bool = False) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{record.experiment}.csv",
             "summary": out / "summary.json",
             "record": out / "run_record.json"}
    write_csv(paths["csv"], record.table, record.config_hash)
    for name, table in record.series.items():
        paths[name] = out / f"{record.experiment}_{name}.csv"
        write_csv(paths[name], table, record.config_hash)
    paths["summary"].write_text(json.dumps(record.summary(), indent=2, sort_keys=True) + "\n")
    paths["record"].write_text(json.dumps(record.to_json(), indent=2, sort_keys=True) + "\n")
    if svg:
        paths.update(write_svg(record, out))
    return paths


# x column, y column and series key per experiment
PLOTS = {
    "ill_condition_sweep": ("kappa", "sir_after_db", "mode"),
    "bandwidth_sweep": ("carrier_hz", "sir_after_db", "mode"),
    "accuracy_sweep": ("target_0", "error_0", "mode"),
}


def write_svg(record: RunRecord, out_dir) -> Dict[str, Path]:
    """Line plot of the main series; skipped with a warning without matplotlib."""
    spec = PLOTS.get(record.experiment)
    if spec is None or not record.table.rows:
        return {}
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        warnings.warn("matplotlib is not installed; no SVG written")
        return {}
    x, y, key = spec
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in dict.fromkeys(r[key] for r in record.table.rows):
        sub = record.table.where(**{key: label})
        ax.plot(sub.column(x), sub.column(y), "o-", label=str(label))
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.legend()
    path = Path(out_dir) / f"{record.experiment}.svg"
    # fixed metadata keeps the file reproducible
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return {"svg": path}


def summarize(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"mean": None, "min": None, "max": None}
    return {"mean": float(v.mean()), "min": float(v.min()), "max": float(v.max())}
