"""CSV artifacts.

Two schemas leave the engine:

  metrics:      exposure,seed,metric,scope,value
  figure data:  x,series,mean,stderr

Both are UTF-8 with LF line endings, floats printed with 9 significant
digits, and rows in a canonical sort order so equal inputs produce
byte-identical files.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from flab.errors import ConfigError, DataFormatError

METRICS_HEADER = "exposure,seed,metric,scope,value"
FIGURE_HEADER = "x,series,mean,stderr"
MEAN_CURVES_HEADER = "exposure,metric,scope,mean,stderr"


def fmt(value):
    """Nine significant digits, no trailing noise."""
    return "%.9g" % float(value)


def atomic_write_text(path, text):
    """Write-to-temp plus rename so readers never see partial files."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc}") from exc


@dataclass(frozen=True)
class MetricRow:
    exposure: int
    seed: int
    metric: str
    scope: str
    value: float


def scope_sort_key(scope):
    """overall, then class:<id> by id, then analysis:<tool> by name."""
    if scope == "overall":
        return (0, 0, "")
    if scope.startswith("class:"):
        try:
            return (1, int(scope[6:]), "")
        except ValueError as exc:
            raise ConfigError(f"bad class scope {scope!r}") from exc
    if scope.startswith("analysis:"):
        return (2, 0, scope[9:])
    raise ConfigError(f"unknown scope {scope!r}")


def sort_rows(rows):
    return sorted(rows, key=lambda r: (r.exposure, r.seed, r.metric,
                                       scope_sort_key(r.scope)))


def write_metrics_csv(rows, path):
    """Canonical metrics file; refuses an empty record set."""
    rows = list(rows)
    if not rows:
        raise ConfigError("refusing to write an empty metrics file")
    lines = [METRICS_HEADER]
    for r in sort_rows(rows):
        scope_sort_key(r.scope)  # validate before writing
        lines.append(f"{r.exposure},{r.seed},{r.metric},{r.scope},{fmt(r.value)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path


def read_metrics_csv(path):
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0] != METRICS_HEADER:
        raise DataFormatError(f"{path}:1: expected header {METRICS_HEADER!r}")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DataFormatError(f"{path}:{ln}: expected 5 fields, got {len(parts)}")
        try:
            rows.append(MetricRow(int(parts[0]), int(parts[1]), parts[2],
                                  parts[3], float(parts[4])))
        except ValueError as exc:
            raise DataFormatError(f"{path}:{ln}: {exc}") from exc
    return rows


def _mean_stderr(values):
    v = np.asarray(values, dtype=np.float64)
    mean = float(v.mean())
    if v.size < 2:
        return mean, 0.0
    return mean, float(v.std(ddof=1) / np.sqrt(v.size))


def write_mean_curves_csv(rows, path):
    """Aggregate per-seed metric rows into mean and s/sqrt(n) per cell."""
    rows = list(rows)
    if not rows:
        raise ConfigError("refusing to write an empty mean-curve file")
    cells = {}
    for r in rows:
        cells.setdefault((r.exposure, r.metric, r.scope), []).append(r.value)
    lines = [MEAN_CURVES_HEADER]
    for (exposure, metric, scope) in sorted(cells, key=lambda k: (k[0], k[1],
                                                                  scope_sort_key(k[2]))):
        mean, stderr = _mean_stderr(cells[(exposure, metric, scope)])
        lines.append(f"{exposure},{metric},{scope},{fmt(mean)},{fmt(stderr)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path


def write_figure_csv(points, path):
    """Tidy figure data: points are (x, series, mean, stderr) tuples."""
    points = list(points)
    if not points:
        raise ConfigError("refusing to write an empty figure file")
    lines = [FIGURE_HEADER]
    for x, series, mean, stderr in sorted(points, key=lambda p: (p[1], p[0])):
        lines.append(f"{fmt(x)},{series},{fmt(mean)},{fmt(stderr)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path


def read_figure_csv(path):
    """Parse a tidy figure CSV; errors carry the offending line number."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0] != FIGURE_HEADER:
        raise DataFormatError(f"{path}:1: expected header {FIGURE_HEADER!r}")
    out = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataFormatError(f"{path}:{ln}: expected 4 fields, got {len(parts)}")
        try:
            out.append((float(parts[0]), parts[1], float(parts[2]), float(parts[3])))
        except ValueError as exc:
            raise DataFormatError(f"{path}:{ln}: {exc}") from exc
    if not out:
        raise DataFormatError(f"{path}:2: no data rows")
    return out
