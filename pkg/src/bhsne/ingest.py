"""Data matrices, labels and embeddings on disk, plus the run configuration.

Two matrix formats are supported:

* CSV: one object per line, comma separated, optionally with an integer
  class label in the last column.
* Binary: the 8-byte magic ``b"BHSNE\\x00v1"``, then ``N`` and ``D`` as
  little-endian uint64, then ``N*D`` little-endian float64 values, row-major.
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

MAGIC = b"BHSNE\x00v1"
_HEADER_BYTES = len(MAGIC) + 16


class FormatError(ValueError):
    """A file does not follow the expected layout."""


class ParseError(FormatError):
    """A text file could not be parsed; carries the 1-based line number."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


def check_matrix(values, path=None):
    """Validate a data matrix and return it as a C-contiguous float64 array.

    Raises FormatError when the shape violates ``n >= 2, d >= 1`` or when an
    entry is NaN/Inf (the message names the first offending row and column).
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    prefix = f"{path}: " if path is not None else ""
    if values.ndim != 2:
        raise FormatError(f"{prefix}expected a 2-D matrix, got {values.ndim}-D")
    n, d = values.shape
    if n < 2 or d < 1:
        raise FormatError(f"{prefix}data matrix needs n >= 2 and d >= 1, got {n}x{d}")
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise FormatError(
            f"{prefix}non-finite value {values[row, col]!r} at row {row}, column {col}"
        )
    return values


def load_csv(path, has_label_column=False):
    """Read a comma separated matrix.

    Returns ``(X, labels)``; ``labels`` is None unless ``has_label_column``,
    in which case the last column is split off as integer class ids.
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not field.strip() for field in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(
                    f"expected {width} fields, found {len(row)}", path, lineno
                )
            try:
                rows.append([float(field) for field in row])
            except ValueError:
                bad = next(f for f in row if not _is_float(f))
                raise ParseError(f"non-numeric field {bad!r}", path, lineno) from None
    if not rows:
        raise FormatError(f"{path}: no data rows")

    values = np.array(rows, dtype=np.float64)
    labels = None
    if has_label_column:
        if values.shape[1] < 2:
            raise FormatError(f"{path}: label column requested but rows have one field")
        label_col = values[:, -1]
        if not np.all(label_col == np.round(label_col)):
            raise FormatError(f"{path}: label column contains non-integer values")
        labels = label_col.astype(np.int64)
        values = values[:, :-1]
    return check_matrix(values, path), labels


def _is_float(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_labels(path):
    """Read one integer label per line."""
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                labels.append(int(text))
            except ValueError:
                raise ParseError(f"label {text!r} is not an integer", path, lineno) from None
    return np.asarray(labels, dtype=np.int64)


def write_binary(path, values):
    values = check_matrix(values)
    n, d = values.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([n, d], dtype="<u8").tobytes())
        fh.write(values.astype("<f8", copy=False).tobytes(order="C"))


def load_binary(path):
    with open(path, "rb") as fh:
        header = fh.read(_HEADER_BYTES)
        if len(header) < _HEADER_BYTES or header[: len(MAGIC)] != MAGIC:
            raise FormatError(f"{path}: bad magic, not a BHSNE binary matrix")
        n, d = (int(v) for v in np.frombuffer(header[len(MAGIC):], dtype="<u8"))
        payload = fh.read()
    expected = n * d * 8
    if len(payload) < expected:
        raise FormatError(
            f"{path}: truncated payload, header declares {n}x{d} "
            f"({expected} bytes) but only {len(payload)} bytes present"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f8").reshape(n, d).astype(np.float64)
    return check_matrix(values, path)


def load_matrix(path, fmt=None, has_label_column=False):
    """Dispatch on ``fmt`` ('csv' or 'bin'); guessed from the extension if None."""
    if fmt is None:
        fmt = "bin" if os.path.splitext(str(path))[1] in (".bin", ".bhsne") else "csv"
    if fmt == "bin":
        if has_label_column:
            raise FormatError("binary matrices carry no label column; pass a labels file")
        return load_binary(path), None
    if fmt == "csv":
        return load_csv(path, has_label_column=has_label_column)
    raise ValueError(f"unknown format {fmt!r}")


def format_float(x):
    """Shortest decimal string that round-trips to the same double."""
    text = repr(float(x))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def write_embedding(path, Y, labels=None):
    """Write ``y1,y2[,y3][,label]`` rows with round-trip precision."""
    Y = np.asarray(Y, dtype=np.float64)
    if not np.all(np.isfinite(Y)):
        raise FormatError(f"{path}: refusing to write a non-finite embedding")
    if labels is not None and len(labels) != len(Y):
        raise FormatError(f"{path}: {len(labels)} labels for {len(Y)} points")
    lines = []
    for i, row in enumerate(Y):
        fields_ = [format_float(v) for v in row]
        if labels is not None:
            fields_.append(str(int(labels[i])))
        lines.append(",".join(fields_))
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines))
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"could not write embedding to {path}: {exc}") from exc


def read_embedding(path, has_label_column=False):
    """Inverse of write_embedding."""
    values, labels = load_csv(path, has_label_column=has_label_column)
    return values, labels


@dataclass
class RunConfig:
    """Run parameters; defaults follow the standard Barnes-Hut-SNE setup."""

    perplexity: float = 30.0
    theta: float = 0.5
    rho: float = 0.25
    iterations: int = 1000
    alpha: float = 12.0
    exaggeration_iters: int = 250
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch_iter: int = 250
    eta: float = 200.0
    dims: int = 2
    seed: int = 0
    algorithm: str = "bh"
    pca_target: int = 50
    condition: str = "standard"
    cost_every: int = 50

    def __post_init__(self):
        if not self.perplexity > 0:
            raise ValueError(f"perplexity must be > 0, got {self.perplexity}")
        if self.theta < 0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")
        if self.rho < 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.alpha < 1:
            raise ValueError(f"exaggeration alpha must be >= 1, got {self.alpha}")
        if self.exaggeration_iters < 0 or self.momentum_switch_iter < 0:
            raise ValueError("iteration boundaries must be >= 0")
        for name in ("momentum_early", "momentum_late"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {value}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.dims not in (2, 3):
            raise ValueError(f"output dims must be 2 or 3, got {self.dims}")
        if self.algorithm not in ("exact", "bh", "dual"):
            raise ValueError(f"algorithm must be exact, bh or dual, got {self.algorithm!r}")
        if self.condition not in ("standard", "paper-literal"):
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.pca_target < 0:
            raise ValueError(f"pca_target must be >= 0, got {self.pca_target}")
        if self.cost_every < 1:
            raise ValueError("cost_every must be >= 1")

    @property
    def trade_off(self):
        """The approximation parameter the chosen algorithm actually uses."""
        if self.algorithm == "dual":
            return self.rho
        if self.algorithm == "bh":
            return self.theta
        return 0.0

    def as_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]
