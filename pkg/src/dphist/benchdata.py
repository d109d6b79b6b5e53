"""Benchmark dataset generators and histogram file I/O.

The synthetic suite has 100-cell histograms (10x10 in two dimensions)
whose first cell is a large 10000 count: Level(k) fills the rest with a
constant k, Stair with 1..99, Step(k) with 49 zeros then 50 k's, and
SplitStairs with the Stair prefix up to cell 49 followed by zeros.  The
difficult-dataset generator places a single hot cell of about log(d)/eps
records, the regime where nonnegative outputs must sacrifice either the
total or that cell.  Real histograms are ingested from plain CSV (one
row per line, comma-separated nonnegative integers).
"""

import math

import numpy as np
from dataclasses import dataclass

from .core import Histogram

SYNTHETIC_CELLS = 100
HOT_CELL = 10000

_FAMILIES = ("level", "stair", "step", "splitstairs", "difficult", "file")


@dataclass(frozen=True)
class DatasetSpec:
    """A benchmark dataset request.

    ``family`` is one of level/stair/step/splitstairs (synthetic,
    100 cells), difficult (needs ``d`` and ``eps``), or file (needs
    ``path``; ``shape`` optional, defaults to one row).
    """

    family: str
    k: int = 0
    dims: int = 1
    d: int = SYNTHETIC_CELLS
    eps: float = 1.0
    path: str = ""
    shape: tuple = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown dataset family {self.family!r}")
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if self.dims not in (1, 2):
            raise ValueError("dims must be 1 or 2")

    @property
    def label(self):
        if self.family == "level":
            return f"Level{self.k:02d}-{self.dims}d"
        if self.family == "stair":
            return f"Stair-{self.dims}d"
        if self.family == "step":
            return f"Step{self.k}-{self.dims}d"
        if self.family == "splitstairs":
            return f"SplitStairs-{self.dims}d"
        if self.family == "difficult":
            return f"Difficult(d={self.d},eps={self.eps:g})"
        return self.path or "file"


def parse_dataset(text, dims=1):
    """Parse a dataset name like ``level16``, ``stair``, ``step50``,
    ``splitstairs``, or ``file:<path>``."""
    text = text.strip()
    low = text.lower()
    if low.startswith("file:"):
        return DatasetSpec("file", path=text[5:], dims=dims)
    if low.startswith("level"):
        return DatasetSpec("level", k=int(low[5:]), dims=dims)
    if low.startswith("step"):
        return DatasetSpec("step", k=int(low[4:]), dims=dims)
    if low == "stair":
        return DatasetSpec("stair", dims=dims)
    if low == "splitstairs":
        return DatasetSpec("splitstairs", dims=dims)
    raise ValueError(f"cannot parse dataset name {text!r}")


def _synthetic_cells(spec):
    cells = np.zeros(SYNTHETIC_CELLS)
    cells[0] = HOT_CELL
    if spec.family == "level":
        cells[1:] = spec.k
    elif spec.family == "stair":
        cells[1:] = np.arange(1, SYNTHETIC_CELLS)
    elif spec.family == "step":
        cells[50:] = spec.k
    elif spec.family == "splitstairs":
        cells[1:50] = np.arange(1, 50)
    return cells


def generate(spec):
    """Deterministically build the histogram described by ``spec``."""
    if spec.family == "difficult":
        return generate_difficult(spec.d, spec.eps)
    if spec.family == "file":
        return load_histogram_file(spec.path, spec.shape)
    cells = _synthetic_cells(spec)
    shape = (10, 10) if spec.dims == 2 else (SYNTHETIC_CELLS,)
    return Histogram(cells, shape)


def generate_difficult(d, eps):
    """One hot cell worth about log(d)/eps records, the rest zero.

    The hot count is rounded to the nearest integer and floored at 1
    since true data are record counts.
    """
    if d < 2:
        raise ValueError("difficult dataset needs at least 2 cells")
    if eps <= 0:
        raise ValueError("eps must be positive")
    cells = np.zeros(int(d))
    cells[0] = max(1, round(math.log(d) / eps))
    return Histogram(cells)


class HistogramFileError(ValueError):
    """Raised when a histogram CSV cannot be ingested."""


def load_histogram_file(path, shape=None):
    """Read a histogram from CSV: one row per line, comma-separated
    nonnegative integers, UTF-8, LF line endings.

    The shape is declared by the caller (defaulting to a single flat
    row); the file contents are checked for consistency against it.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().split("\n") if ln.strip()]
    except OSError as exc:
        raise HistogramFileError(f"cannot read {path}: {exc}") from exc
    rows = []
    for r, line in enumerate(lines):
        row = []
        for c, cell in enumerate(line.split(",")):
            try:
                value = int(cell.strip())
            except ValueError:
                raise HistogramFileError(
                    f"{path}: malformed entry at row {r}, column {c}: "
                    f"{cell.strip()!r}") from None
            if value < 0:
                raise HistogramFileError(
                    f"{path}: negative count {value} at row {r}, column {c}")
            row.append(value)
        if rows and len(row) != len(rows[0]):
            raise HistogramFileError(
                f"{path}: row {r} has {len(row)} entries, expected "
                f"{len(rows[0])}")
        rows.append(row)
    data = np.array(rows, dtype=float)
    if shape is None:
        shape = (data.size,)
    shape = tuple(int(s) for s in shape)
    file_shape = (data.size,) if len(shape) == 1 else data.shape
    if tuple(file_shape) != shape:
        raise HistogramFileError(
            f"{path}: file shape {tuple(data.shape)} does not match "
            f"declared shape {shape}")
    return Histogram(data.ravel(), shape)


def save_histogram_file(hist, path):
    """Write a histogram as integer CSV rows (inverse of the loader)."""
    arr = hist.as_array()
    if arr.ndim == 1:
        arr = arr[None, :]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in arr:
            fh.write(",".join(str(int(round(v))) for v in row))
            fh.write("\n")
