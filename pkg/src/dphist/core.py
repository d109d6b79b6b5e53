"""Histograms, counting queries, and grouped query workloads.

A histogram is a flat vector of nonnegative cell values together with a
1-D or 2-D shape.  Counting queries are 0/1 indicator vectors over the
cells; disjoint queries are bundled into named groups, and an ordered
list of groups forms a workload.  Everything here is immutable after
construction and safe to share across threads.
"""

import numpy as np
from dataclasses import dataclass, replace
from functools import cached_property


def _readonly(values, dtype=float):
    arr = np.array(values, dtype=dtype, copy=True).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Histogram:
    """Nonnegative cell values with a 1-D or 2-D shape."""

    cells: np.ndarray
    shape: tuple

    def __init__(self, cells, shape=None):
        cells = _readonly(cells)
        if shape is None:
            shape = (cells.size,)
        shape = tuple(int(s) for s in shape)
        if len(shape) not in (1, 2):
            raise ValueError(f"histogram shape must be 1-D or 2-D, got {shape}")
        if int(np.prod(shape)) != cells.size:
            raise ValueError(
                f"shape {shape} does not match {cells.size} cells")
        if cells.size and cells.min() < 0:
            i = int(np.argmin(cells))
            raise ValueError(f"negative cell value {cells[i]} at index {i}")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "shape", shape)

    @property
    def size(self):
        return self.cells.size

    @property
    def ndim(self):
        return len(self.shape)

    def total(self):
        return float(self.cells.sum())

    def as_array(self):
        """Cell values reshaped to ``shape`` (row-major)."""
        return self.cells.reshape(self.shape)


@dataclass(frozen=True, eq=False)
class CountingQuery:
    """A 0/1 indicator over histogram cells with a stable string id."""

    indicator: np.ndarray
    id: str

    def __init__(self, indicator, id):
        indicator = _readonly(indicator)
        bad = (indicator != 0) & (indicator != 1)
        if bad.any():
            raise ValueError(f"query {id!r} has non-binary indicator entries")
        object.__setattr__(self, "indicator", indicator)
        object.__setattr__(self, "id", str(id))

    @property
    def size(self):
        return self.indicator.size


def evaluate(query, hist):
    """Answer a counting query on a histogram (dot product of indicator
    and cells)."""
    if query.indicator.size != hist.cells.size:
        raise ValueError(
            f"query {query.id!r} has {query.indicator.size} entries, "
            f"histogram has {hist.cells.size} cells")
    return float(query.indicator @ hist.cells)


@dataclass(frozen=True, eq=False)
class QueryGroup:
    """An ordered family of pairwise-disjoint counting queries.

    ``noise`` is None until a privacy budget has been calibrated for the
    enclosing workload (see ``mechanisms.calibrate``).
    """

    name: str
    queries: tuple
    noise: object = None

    def __init__(self, name, queries, noise=None):
        queries = tuple(queries)
        if not queries:
            raise ValueError(f"group {name!r} has no queries")
        n = queries[0].indicator.size
        for q in queries:
            if q.indicator.size != n:
                raise ValueError(
                    f"group {name!r}: query {q.id!r} dimension mismatch")
        cover = np.zeros(n)
        for q in queries:
            cover += q.indicator
        if cover.max() > 1:
            c = int(np.argmax(cover))
            raise ValueError(
                f"group {name!r}: queries overlap at cell {c}")
        object.__setattr__(self, "name", str(name))
        object.__setattr__(self, "queries", queries)
        object.__setattr__(self, "noise", noise)

    def __len__(self):
        return len(self.queries)

    @property
    def n_cells(self):
        return self.queries[0].indicator.size

    @cached_property
    def indicator_matrix(self):
        mat = np.stack([q.indicator for q in self.queries])
        mat.setflags(write=False)
        return mat

    def with_noise(self, spec):
        return QueryGroup(self.name, self.queries, noise=spec)


@dataclass(frozen=True, eq=False)
class Workload:
    """Ordered query groups; the order doubles as the Sequential-Fitting
    priority."""

    groups: tuple

    def __init__(self, groups):
        groups = tuple(groups)
        if not groups:
            raise ValueError("workload has no groups")
        names = [g.name for g in groups]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate group names in workload: {names}")
        n = groups[0].n_cells
        for g in groups:
            if g.n_cells != n:
                raise ValueError(f"group {g.name!r} dimension mismatch")
        object.__setattr__(self, "groups", groups)

    @property
    def n_cells(self):
        return self.groups[0].n_cells

    @property
    def group_names(self):
        return [g.name for g in self.groups]

    def group(self, name):
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(f"no group named {name!r}")

    def iter_queries(self):
        for g in self.groups:
            for q in g.queries:
                yield g, q

    @property
    def n_queries(self):
        return sum(len(g) for g in self.groups)

    def with_noise(self, specs):
        """New workload with per-group noise specs (dict name -> spec)."""
        return Workload([g.with_noise(specs[g.name]) for g in self.groups])


def _column_counts(workload):
    counts = np.zeros(workload.n_cells)
    for _, q in workload.iter_queries():
        counts += q.indicator
    return counts


def l1_sensitivity(workload):
    """Worst-case L1 change of the workload answer vector from adding or
    removing one record.

    One added record changes exactly one cell by 1, so this is the largest
    per-cell count of covering queries.
    """
    return float(_column_counts(workload).max())


def l2_sensitivity(workload):
    """Worst-case L2 change of the workload answer vector; square root of
    the largest per-cell covering count for binary queries."""
    counts = np.zeros(workload.n_cells)
    for _, q in workload.iter_queries():
        counts += q.indicator ** 2
    return float(np.sqrt(counts.max()))


# ---------------------------------------------------------------------------
# Standard workload builders

def sum_group(n):
    return QueryGroup("sum", [CountingQuery(np.ones(n), "sum")])


def identity_group(n):
    eye = np.eye(n)
    return QueryGroup(
        "identity", [CountingQuery(eye[i], f"id[{i}]") for i in range(n)])


def marginal_group(shape, axis):
    """Marginal on one dimension of a row-major 2-D histogram.

    ``axis=0`` ("marg1") has one query per row, summing over columns;
    ``axis=1`` ("marg2") has one query per column, summing over rows.
    """
    rows, cols = shape
    name = "marg1" if axis == 0 else "marg2"
    grid = np.arange(rows * cols).reshape(rows, cols)
    queries = []
    for i in range(shape[axis]):
        ind = np.zeros(rows * cols)
        ind[grid[i, :] if axis == 0 else grid[:, i]] = 1
        queries.append(CountingQuery(ind, f"{name}[{i}]"))
    return QueryGroup(name, queries)


def standard_workload(shape):
    """The benchmark workload: [sum, identity] in 1-D and
    [sum, identity, marg1, marg2] in 2-D (also the fitting priority)."""
    shape = tuple(int(s) for s in shape)
    n = int(np.prod(shape))
    groups = [sum_group(n), identity_group(n)]
    if len(shape) == 2:
        groups.append(marginal_group(shape, 0))
        groups.append(marginal_group(shape, 1))
    elif len(shape) != 1:
        raise ValueError(f"unsupported shape {shape}")
    return Workload(groups)
