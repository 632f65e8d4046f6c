"""File formats: dataset CSV (header y,x1..xp), feature-only CSV, model JSON,
labels/trace/prediction CSVs, covariance import, and the run manifest.

All writes are atomic (write-temp-then-rename) and floats are printed with 17
significant digits so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile

import numpy as np

from .types import Dataset, dumps_json, fit_result_to_dict, model_params_from_dict

FLOAT_FMT = ".17g"


class DataFormatError(ValueError):
    pass


def _fmt(x):
    return format(float(x), FLOAT_FMT)


def atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Dataset CSV
# ---------------------------------------------------------------------------

def read_dataset_csv(path):
    """Read a dataset CSV with header y,x1..xp; errors name the line."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if not header or header[0] != "y":
            raise DataFormatError(f"{path}: line 1: header must start with 'y', got {header[:3]}")
        p = len(header) - 1
        if p < 1:
            raise DataFormatError(f"{path}: line 1: no feature columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p + 1:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {p + 1} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    try:
        return Dataset(X=arr[:, 1:], y=arr[:, 0], feature_names=header[1:])
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def write_dataset_csv(path, data):
    lines = ["y," + ",".join(data.feature_names or
                             [f"x{j + 1}" for j in range(data.p)])]
    for i in range(data.n):
        lines.append(",".join([_fmt(data.y[i])] + [_fmt(v) for v in data.X[i]]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_features_csv(path):
    """Feature-only CSV with header x1..xp; returns (matrix, names)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header and header[0] == "y":
            raise DataFormatError(f"{path}: expected features only (x1..xp), found a y column")
        p = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {p} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64), header


def read_covariance_csv(path, p):
    """Headerless p x p covariance matrix."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        arr = np.asarray([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    if arr.shape != (p, p):
        raise DataFormatError(f"{path}: expected a {p} x {p} matrix, got {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Model / labels / trace / predictions
# ---------------------------------------------------------------------------

def write_model_json(path, result, scheme):
    atomic_write_text(path, dumps_json(fit_result_to_dict(result, scheme=scheme)) + "\n")


def read_model_json(path):
    with open(path) as fh:
        d = json.load(fh)
    return model_params_from_dict(d), d


def write_labels_csv(path, labels):
    lines = ["row,label"] + [f"{i + 1},{int(v)}" for i, v in enumerate(labels)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_trace_csv(path, trace):
    lines = ["iteration,objective"] + [f"{t + 1},{_fmt(q)}" for t, q in enumerate(trace)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_predictions_csv(path, y_hat, probs, hard):
    k = probs.shape[1]
    header = "row,hard_cluster," + ",".join(f"prob_{j + 1}" for j in range(k)) + ",y_hat"
    lines = [header]
    for i in range(len(y_hat)):
        prob_s = ",".join(_fmt(v) for v in probs[i])
        lines.append(f"{i + 1},{int(hard[i])},{prob_s},{_fmt(y_hat[i])}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_table_csv(path, rows, columns):
    """Long-format CSV from dict rows; None becomes an empty field."""
    lines = [",".join(columns)]
    for row in rows:
        vals = []
        for c in columns:
            v = row.get(c)
            if v is None:
                vals.append("")
            elif isinstance(v, float):
                vals.append(_fmt(v))
            else:
                vals.append(str(v))
        lines.append(",".join(vals))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_manifest(path, command, config_snapshot, input_paths, output_paths,
                   seed, wall_time_s):
    from . import __version__
    manifest = {
        "command": command,
        "config": config_snapshot,
        "input_paths": list(input_paths),
        "output_paths": list(output_paths),
        "seed": seed,
        "wall_time_s": float(wall_time_s),
        "library_version": __version__,
    }
    atomic_write_text(path, dumps_json(manifest) + "\n")
