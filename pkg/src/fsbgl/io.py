"""File formats: matrices and triplets as CSV, configs and manifests as YAML.

Floats are written with ``repr`` (shortest round-trip form, at most 17
significant digits) so every writer/reader pair is lossless.  All writers
go through a temp file and ``os.replace``.
"""

from __future__ import annotations

import contextlib
import csv
import os
import tempfile

import numpy as np
import scipy.sparse as sp
import yaml


@contextlib.contextmanager
def atomic_open(path, mode="w"):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _f(v):
    return repr(float(v))


def write_matrix(path, A, header=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in A:
            w.writerow([_f(v) for v in row])


def read_matrix(path, header=False):
    """Returns the float matrix, plus the header row if ``header``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head = rows.pop(0) if header and rows else None
    rows = [r for r in rows if r]
    A = np.array([[float(v) for v in r] for r in rows]) if rows else np.zeros((0, 0))
    return (A, head) if header else A


def write_locations(path, locations):
    write_matrix(path, locations, header=["x", "y"])


def read_locations(path):
    A, _ = read_matrix(path, header=True)
    return A.reshape(-1, 2) if A.size else np.zeros((0, 2))


def write_triplets(path, A):
    """Upper triangle of a symmetric matrix as ``row,col,value`` (0-based).

    Zeros are skipped except on the diagonal, which is always written so the
    dimension can be read back.
    """
    A = sp.coo_matrix(A) if sp.issparse(A) else sp.coo_matrix(np.asarray(A, dtype=float))
    n = A.shape[0]
    up = sp.triu(A, format="coo")
    entries = {(int(i), int(j)): float(v) for i, j, v in zip(up.row, up.col, up.data) if v != 0}
    for i in range(n):
        entries.setdefault((i, i), 0.0)
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for (i, j) in sorted(entries):
            w.writerow([i, j, _f(entries[i, j])])


def read_triplets(path, dense=True):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    i = np.array([int(r[0]) for r in rows if r], dtype=int)
    j = np.array([int(r[1]) for r in rows if r], dtype=int)
    v = np.array([float(r[2]) for r in rows if r])
    n = int(max(i.max(), j.max()) + 1) if len(i) else 0
    off = i != j
    A = sp.coo_matrix((np.concatenate([v, v[off]]),
                       (np.concatenate([i, j[off]]), np.concatenate([j, i[off]]))),
                      shape=(n, n)).tocsc()
    return A.toarray() if dense else A


def write_yaml(path, obj):
    with atomic_open(path) as fh:
        yaml.safe_dump(_plain(obj), fh, sort_keys=False)


def read_yaml(path):
    with open(path) as fh:
        return yaml.safe_load(fh) or {}


def _plain(obj):
    """Convert numpy scalars/arrays and tuples into YAML-safe builtins."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_dataset(folder, dataset):
    """``locations.csv`` (x, y) and ``replicates.csv`` (sites x replicates)."""
    write_locations(os.path.join(folder, "locations.csv"), dataset.locations)
    write_matrix(os.path.join(folder, "replicates.csv"), dataset.values,
                 header=[f"r{k}" for k in range(dataset.m)])


def read_dataset(folder):
    from .likelihood import SpatialDataset
    X = read_locations(os.path.join(folder, "locations.csv"))
    Y, _ = read_matrix(os.path.join(folder, "replicates.csv"), header=True)
    if Y.shape[0] != X.shape[0]:
        raise ValueError("replicates.csv and locations.csv differ in row count")
    return SpatialDataset(X, Y)
