"""CSV and JSON persistence for matrices, trajectories and experiment tables."""

import csv
import json

import numpy as np


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_matrix_csv(path):
    """Read a row-major numeric matrix; ``#`` lines and a header row are skipped."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in row if c.strip() != ""]
            if not cells:
                continue
            if not all(_is_number(c) for c in cells):
                if rows:
                    raise ValueError(f"{path}:{lineno}: non-numeric row after data")
                continue
            rows.append([float(c) for c in cells])
    if not rows:
        raise ValueError(f"{path}: no numeric data")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged rows (widths {sorted(widths)})")
    return np.array(rows)


def read_vector_csv(path):
    """Vector stored either as one row or as one column."""
    m = read_matrix_csv(path)
    if m.shape[0] != 1 and m.shape[1] != 1:
        raise ValueError(f"{path}: expected a single row or column, got shape {m.shape}")
    return m.reshape(-1)


def read_csv_metadata(path):
    """Return ``{key: value}`` from ``# key=value`` header lines."""
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
    return meta


def format_float(x):
    # repr round-trips float64 exactly
    return repr(float(x))


def write_csv(path, columns, rows, meta=None):
    """Write ``rows`` under ``columns`` with ``# key=value`` metadata lines first."""
    with open(path, "w", newline="") as fh:
        for key, value in (meta or {}).items():
            if not isinstance(value, str):
                value = json.dumps(value, sort_keys=True)
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, (float, np.floating)) else v for v in row]
            )


def write_matrix_csv(path, M, meta=None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        for key, value in (meta or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        for row in M:
            writer.writerow([format_float(v) for v in row])
