"""Panel containers, partitions and long-format CSV ingestion."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .exceptions import DataError, IncompleteGrid, ParseError, SizeMismatch


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced panel ``y[i, t] = g_i(X[i, t] @ beta_i) + noise``.

    ``X`` has ``p + 1`` covariates per cell; covariate 0 is the anchor whose
    index coefficient is pinned to one.
    """

    y: np.ndarray
    X: np.ndarray
    ids: tuple = None
    times: tuple = None

    def __post_init__(self):
        y = _frozen(self.y)
        X = _frozen(self.X)
        if y.ndim != 2:
            raise SizeMismatch(f"y must be m x T, got shape {y.shape}")
        if X.ndim != 3 or X.shape[:2] != y.shape:
            raise SizeMismatch(f"X must be m x T x (p+1) matching y {y.shape}, got {X.shape}")
        m, T = y.shape
        if m < 1 or T < 1 or X.shape[2] < 2:
            raise SizeMismatch("need m >= 1, T >= 1 and p >= 1")
        if not (np.isfinite(y).all() and np.isfinite(X).all()):
            raise DataError("panel values must be finite")
        ids = tuple(range(m)) if self.ids is None else tuple(self.ids)
        times = tuple(range(T)) if self.times is None else tuple(self.times)
        if len(ids) != m or len(times) != T:
            raise SizeMismatch("id/time labels do not match the panel shape")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "times", times)

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[2] - 1

    def select_times(self, idx) -> PanelDataset:
        idx = np.asarray(idx, dtype=int)
        return PanelDataset(self.y[:, idx], self.X[:, idx, :], self.ids,
                            tuple(self.times[k] for k in idx))

    def select_individuals(self, idx) -> PanelDataset:
        idx = np.asarray(idx, dtype=int)
        return PanelDataset(self.y[idx], self.X[idx], tuple(self.ids[k] for k in idx), self.times)

    def standardized(self) -> PanelDataset:
        """Per-individual z-scores of the response and of every covariate."""
        def z(a):
            sd = a.std(axis=1, keepdims=True)
            sd[sd == 0] = 1.0
            return (a - a.mean(axis=1, keepdims=True)) / sd
        return PanelDataset(z(self.y), z(self.X), self.ids, self.times)


@dataclass(frozen=True)
class IndexVector:
    """Index coefficients with the anchor coordinate pinned to one."""

    free: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "free", _frozen(np.atleast_1d(self.free)))

    @property
    def beta(self) -> np.ndarray:
        return np.concatenate(([1.0], self.free))

    @classmethod
    def from_full(cls, beta) -> IndexVector:
        beta = np.asarray(beta, dtype=float)
        if beta[0] != 1.0:
            raise ValueError("coordinate 0 of an index vector must be exactly 1")
        return cls(beta[1:])


@dataclass(frozen=True, eq=False)
class PanelFit:
    """Fitted index vectors and spline coefficients for every individual.

    ``transforms`` is ``None`` for the plain fit, or one
    :class:`~homog.estimator.EmpiricalCDF` per individual when the spline
    argument is the CDF-transformed index.
    """

    betas: np.ndarray
    thetas: np.ndarray
    basis: object
    transforms: tuple | None = None
    sse: float = float("nan")
    statuses: tuple = ()

    def __post_init__(self):
        betas = _frozen(self.betas)
        thetas = _frozen(self.thetas)
        if betas.ndim != 2 or thetas.ndim != 2 or betas.shape[0] != thetas.shape[0]:
            raise SizeMismatch("betas and thetas must have one row per individual")
        if thetas.shape[1] != self.basis.K:
            raise SizeMismatch(f"thetas have {thetas.shape[1]} columns, basis has K={self.basis.K}")
        if np.any(betas[:, 0] != 1.0):
            raise ValueError("index vectors must have coordinate 0 equal to 1")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "thetas", thetas)

    @property
    def m(self) -> int:
        return self.betas.shape[0]

    @property
    def p(self) -> int:
        return self.betas.shape[1] - 1

    def index_vectors(self) -> list[IndexVector]:
        return [IndexVector(b[1:]) for b in self.betas]


@dataclass(frozen=True)
class Partition:
    """Disjoint cover of ``range(n)`` by nonempty groups.

    Groups are stored in canonical order (ascending minimum member) with
    members sorted.
    """

    n: int
    groups: tuple = field(default=())

    def __post_init__(self):
        groups = [tuple(sorted(int(k) for k in g)) for g in self.groups]
        seen = set()
        for g in groups:
            if not g:
                raise ValueError("partition groups must be nonempty")
            for k in g:
                if k < 0 or k >= self.n or k in seen:
                    raise ValueError(f"element {k} is out of range or repeated")
                seen.add(k)
        if len(seen) != self.n:
            raise ValueError("partition groups do not cover the ground set")
        groups.sort(key=lambda g: g[0])
        object.__setattr__(self, "groups", tuple(groups))

    def __len__(self):
        return len(self.groups)

    def labels(self) -> np.ndarray:
        """Group index of each element, groups numbered in canonical order."""
        lab = np.empty(self.n, dtype=int)
        for s, g in enumerate(self.groups):
            lab[list(g)] = s
        return lab

    @classmethod
    def singletons(cls, n: int) -> Partition:
        return cls(n, tuple((k,) for k in range(n)))

    @classmethod
    def whole(cls, n: int) -> Partition:
        return cls(n, (tuple(range(n)),))


def partition_from_labels(labels: Iterable[int]) -> Partition:
    """Group elements by label; labels need not be dense."""
    labels = np.asarray(list(labels) if not isinstance(labels, np.ndarray) else labels)
    if labels.size == 0:
        raise ValueError("labels must be nonempty")
    groups = {}
    for k, lab in enumerate(labels.tolist()):
        groups.setdefault(lab, []).append(k)
    return Partition(labels.size, tuple(groups.values()))


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for long-format panel files.

    ``covariates=None`` takes every remaining column in header order.
    ``anchor`` names the covariate whose index coefficient is pinned to one;
    it is moved to position 0.
    """

    id: str = "id"
    time: str = "t"
    response: str = "y"
    covariates: Sequence[str] | None = None
    anchor: str | None = None

    def resolve(self, header: Sequence[str]) -> list[str]:
        for col in (self.id, self.time, self.response):
            if col not in header:
                raise ParseError(1, f"missing column {col!r}")
        if self.covariates is None:
            covs = [c for c in header if c not in (self.id, self.time, self.response)]
        else:
            covs = list(self.covariates)
            for c in covs:
                if c not in header:
                    raise ParseError(1, f"missing column {c!r}")
        if self.anchor is not None:
            if self.anchor not in covs:
                raise ParseError(1, f"anchor column {self.anchor!r} is not a covariate")
            covs.remove(self.anchor)
            covs.insert(0, self.anchor)
        if len(covs) < 2:
            raise ParseError(1, "need at least two covariate columns")
        return covs


def _parse_float(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(row, f"non-numeric value {text!r} in column {col!r}") from None
    if not math.isfinite(v):
        raise ParseError(row, f"non-finite value {text!r} in column {col!r}")
    return v


def load_panel_csv(path, schema: PanelSchema | None = None) -> PanelDataset:
    """Read a long-format panel file (one row per individual and time).

    Individuals and times are numbered in order of first appearance.  Row
    numbers in errors are 1-based file lines, the header being line 1.
    """
    schema = schema or PanelSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(1, "empty file") from None
        covs = schema.resolve(header)
        pos = {c: header.index(c) for c in header}
        id_order, t_order = {}, {}
        cells = {}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(row_no, f"expected {len(header)} fields, got {len(row)}")
            ident = row[pos[schema.id]].strip()
            tlab = row[pos[schema.time]].strip()
            yv = _parse_float(row[pos[schema.response]], row_no, schema.response)
            xv = [_parse_float(row[pos[c]], row_no, c) for c in covs]
            i = id_order.setdefault(ident, len(id_order))
            t = t_order.setdefault(tlab, len(t_order))
            if (i, t) in cells:
                raise ParseError(row_no, f"duplicate cell ({ident}, {tlab})")
            cells[(i, t)] = (yv, xv)
    if not cells:
        raise ParseError(2, "no data rows")
    m, T, q = len(id_order), len(t_order), len(covs)
    y = np.empty((m, T))
    X = np.empty((m, T, q))
    ids = list(id_order)
    times = list(t_order)
    for i in range(m):
        for t in range(T):
            try:
                yv, xv = cells[(i, t)]
            except KeyError:
                raise IncompleteGrid(ids[i], times[t]) from None
            y[i, t] = yv
            X[i, t] = xv
    return PanelDataset(y, X, tuple(ids), tuple(times))


def panel_to_csv(data: PanelDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "t", "y"] + [f"x{k + 1}" for k in range(data.p + 1)])
    for i in range(data.m):
        for t in range(data.T):
            w.writerow([data.ids[i], data.times[t], repr(float(data.y[i, t]))]
                       + [repr(float(v)) for v in data.X[i, t]])
    return buf.getvalue()


def write_panel_csv(data: PanelDataset, path) -> Path:
    atomic_write_text(path, panel_to_csv(data))
    return Path(path)
