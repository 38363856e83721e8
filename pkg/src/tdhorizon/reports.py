"""Serialization helpers: deterministic CSV traces and JSON reports.

All numbers are written with 17 significant digits ('%.17g'), enough to
round-trip a double exactly. Files are written to a temporary name in the
target directory and renamed into place, so readers never observe a partial
file. Output contains nothing time- or path-dependent; identical inputs
produce identical bytes.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from typing import Dict, Iterable, List, Optional

import numpy as np

from .exceptions import ConfigurationError
from .sampling import StochTrace
from .solvers import IterTrace
from .version import __version__


def format_float(value) -> str:
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return "%.17g" % value


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise


def _metadata_lines(metadata: Optional[Dict]) -> List[str]:
    lines = []
    if metadata:
        for key, value in metadata.items():
            key = str(key)
            if "=" in key or "\n" in key:
                raise ConfigurationError(f"metadata key {key!r} may not contain '=' or newlines")
            if isinstance(value, float):
                value = format_float(value)
            value = str(value)
            if "\n" in value:
                raise ConfigurationError(f"metadata value for {key!r} may not contain newlines")
            lines.append(f"# {key}={value}")
    return lines


def _csv_text(header: Iterable[str], rows: Iterable[Iterable[str]], metadata: Optional[Dict]) -> str:
    lines = _metadata_lines(metadata)
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def iter_trace_csv(trace: IterTrace, metadata: Optional[Dict] = None) -> str:
    """CSV for a deterministic solver run: one row per iteration."""
    num_features = trace.thetas.shape[1]
    header = ["iter"]
    header += [f"theta_{j}" for j in range(num_features)]
    header += ["residual_inf", "dist_to_fixed_point"]
    rows = []
    for i in range(trace.thetas.shape[0]):
        row = [str(i)]
        row += [format_float(v) for v in trace.thetas[i]]
        row.append(format_float(trace.residual_inf[i]))
        row.append(format_float(trace.dist_to_fixed_point[i]))
        rows.append(row)
    return _csv_text(header, rows, metadata)


def stoch_trace_csv(trace: StochTrace, metadata: Optional[Dict] = None) -> str:
    """CSV for a sampled run: one row per logged iteration."""
    num_features = trace.thetas.shape[1]
    header = ["iter"]
    header += [f"theta_{j}" for j in range(num_features)]
    if trace.lambdas is not None:
        header += [f"lambda_{j}" for j in range(num_features)]
    header.append("dist_to_fixed_point")
    rows = []
    for i in range(trace.thetas.shape[0]):
        row = [str(int(trace.logged_iters[i]))]
        row += [format_float(v) for v in trace.thetas[i]]
        if trace.lambdas is not None:
            row += [format_float(v) for v in trace.lambdas[i]]
        row.append(format_float(trace.dist_to_fixed_point[i]))
        rows.append(row)
    return _csv_text(header, rows, metadata)


def write_iter_trace(path: str, trace: IterTrace, metadata: Optional[Dict] = None) -> None:
    atomic_write_text(path, iter_trace_csv(trace, metadata))


def write_stoch_trace(path: str, trace: StochTrace, metadata: Optional[Dict] = None) -> None:
    atomic_write_text(path, stoch_trace_csv(trace, metadata))


def sanitize(obj):
    """Make an object JSON-serializable: numpy to native types, nonfinite
    floats to None, dict keys to strings."""
    if obj is None or isinstance(obj, (str, bool, int)):
        return obj
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, np.ndarray):
        return [sanitize(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    raise ConfigurationError(f"cannot serialize object of type {type(obj).__name__}")


def json_report(obj) -> str:
    return json.dumps(sanitize(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str, obj) -> None:
    atomic_write_text(path, json_report(obj))


def tool_metadata() -> Dict[str, str]:
    return {"tool_version": __version__}
