"""CSV readers and writers for datasets, ground truth and posterior draws.

Data files have the header ``time,status,treatment,x1,...,xp``. Floats are
written with ``repr`` so that parse followed by re-serialization reproduces
the file byte for byte.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .sampler import Dataset


class DataFormatError(ValueError):
    """A data file does not follow the expected schema."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


def _fmt(v: float) -> str:
    return repr(float(v))


def dataset_header(p: int) -> list[str]:
    return ["time", "status", "treatment"] + [f"x{j + 1}" for j in range(p)]


def write_dataset_csv(path, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset_header(data.p))
        for i in range(data.n):
            w.writerow([_fmt(data.y[i]), int(data.delta[i]), int(data.A[i])]
                       + [_fmt(v) for v in data.X[i]])


def _parse_float(text, row, col):
    if text is None or text.strip() == "":
        raise DataFormatError(f"missing value in column {col!r}", row)
    try:
        v = float(text)
    except ValueError:
        raise DataFormatError(f"cannot parse {text!r} in column {col!r}", row) from None
    if not np.isfinite(v):
        raise DataFormatError(f"non-finite value in column {col!r}", row)
    return v


def read_dataset_csv(path, kind: str = "survival") -> Dataset:
    """Parse a data file; row numbers in errors count data rows from 1."""
    if not os.path.isfile(path):
        raise DataFormatError(f"no such data file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("empty data file") from None
        p = len(header) - 3
        if p < 1 or header != dataset_header(p):
            raise DataFormatError("header must be time,status,treatment,x1..xp")
        rows = []
        for r, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataFormatError(f"expected {len(header)} fields, found {len(rec)}", r)
            vals = [_parse_float(t, r, c) for t, c in zip(rec, header)]
            if vals[1] not in (0.0, 1.0):
                raise DataFormatError("status must be 0 or 1", r)
            if vals[2] not in (0.0, 1.0):
                raise DataFormatError("treatment must be 0 or 1", r)
            if kind == "survival" and not vals[0] > 0:
                raise DataFormatError("time must be positive", r)
            rows.append(vals)
    if not rows:
        raise DataFormatError("data file has no rows")
    M = np.array(rows)
    return Dataset(M[:, 3:], M[:, 2], M[:, 0], M[:, 1], kind)


def write_truth_csv(path, truth_cate, truth_ate: float) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# ate={_fmt(truth_ate)}\n")
        fh.write("cate\n")
        for v in truth_cate:
            fh.write(_fmt(v) + "\n")


def read_truth_csv(path):
    with open(path) as fh:
        first = fh.readline().strip()
        if not first.startswith("# ate="):
            raise DataFormatError("truth file must start with '# ate=<value>'")
        ate = float(first.split("=", 1)[1])
        if fh.readline().strip() != "cate":
            raise DataFormatError("truth file needs a 'cate' column")
        cate = np.array([float(line) for line in fh if line.strip()])
    return cate, ate


def write_draws_csv(path, columns: dict) -> None:
    """One row per draw; ``columns`` maps a name to a vector (one entry per
    draw) or to a n x D matrix expanded as name_1..name_n."""
    names, blocks = [], []
    for name, arr in columns.items():
        a = np.asarray(arr, dtype=float)
        if a.ndim == 1:
            names.append(name)
            blocks.append(a[:, None])
        else:
            names.extend(f"{name}_{i + 1}" for i in range(a.shape[0]))
            blocks.append(a.T)
    M = np.hstack(blocks) if blocks else np.zeros((0, 0))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for row in M:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
