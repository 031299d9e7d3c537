"""Datasets, CSV ingestion, and fold assignments.

A multi-source problem is M per-source samples of (y, X, Z) where X is
the exposure block under study and Z the adjustment block (possibly
empty). Sources may be time-aligned (paired), in which case folds are
shared across sources so that paired rows stay together.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import FoldError, PairingError, ParseError, ShapeError
from .rng import make_rng

ROLES = ("source", "outcome", "exposure", "adjust", "time")


@dataclass
class SourceDataset:
    """One source's rows: outcome y (n,), exposure X (n,p), adjustment Z (n,k)."""

    source_id: int
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))
        self.X = np.asarray(self.X, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.Z.ndim == 1:
            self.Z = self.Z[:, None]
        n = self.y.shape[0]
        if n < 1:
            raise ShapeError("source has no rows", source=self.source_id)
        if self.X.shape[0] != n or self.Z.shape[0] != n:
            raise ShapeError(
                "row counts differ across y/X/Z",
                source=self.source_id,
                n_y=n, n_X=self.X.shape[0], n_Z=self.Z.shape[0],
            )
        for name, arr in (("y", self.y), ("X", self.X), ("Z", self.Z)):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ShapeError(f"non-finite entries in {name}", source=self.source_id)

    @property
    def n(self):
        return self.y.shape[0]

    def take(self, idx):
        idx = np.asarray(idx, dtype=int)
        return SourceDataset(self.source_id, self.y[idx], self.X[idx], self.Z[idx])


@dataclass
class MultiSourceDataset:
    """All sources plus pairing metadata.

    rho[m] = n_m / n_1 (relative source sizes). Column names and source
    labels are carried along for reporting; they do not affect any
    computation. M = 1 is allowed for the single-source pipeline; the
    CSV loader requires M >= 2.
    """

    sources: list
    paired: bool = False
    outcome_name: str = "y"
    x_names: list = field(default_factory=list)
    z_names: list = field(default_factory=list)
    source_labels: list = field(default_factory=list)
    time_values: np.ndarray = None

    def __post_init__(self):
        if len(self.sources) < 1:
            raise ShapeError("need at least one source")
        p = self.sources[0].X.shape[1]
        k = self.sources[0].Z.shape[1]
        for s in self.sources:
            if s.X.shape[1] != p or s.Z.shape[1] != k:
                raise ShapeError(
                    "exposure/adjustment column counts differ across sources",
                    source=s.source_id,
                )
        if self.paired:
            ns = {s.n for s in self.sources}
            if len(ns) != 1:
                raise PairingError("paired design requires equal source sizes",
                                   sizes=sorted(ns))
        if not self.x_names:
            self.x_names = [f"x{j + 1}" for j in range(p)]
        if not self.z_names:
            self.z_names = [f"z{j + 1}" for j in range(k)]
        if not self.source_labels:
            self.source_labels = [str(m + 1) for m in range(len(self.sources))]

    @property
    def M(self):
        return len(self.sources)

    @property
    def n_per_source(self):
        return np.array([s.n for s in self.sources], dtype=int)

    @property
    def p(self):
        return self.sources[0].X.shape[1]

    @property
    def k(self):
        return self.sources[0].Z.shape[1]

    @property
    def rho(self):
        ns = self.n_per_source.astype(float)
        return ns / ns[0]

    def take(self, idx_per_source):
        subs = [s.take(idx) for s, idx in zip(self.sources, idx_per_source)]
        return MultiSourceDataset(
            subs, paired=self.paired, outcome_name=self.outcome_name,
            x_names=list(self.x_names), z_names=list(self.z_names),
            source_labels=list(self.source_labels),
        )

    def single_source(self, m):
        src = self.sources[m]
        return MultiSourceDataset(
            [SourceDataset(0, src.y, src.X, src.Z)],
            paired=False, outcome_name=self.outcome_name,
            x_names=list(self.x_names), z_names=list(self.z_names),
            source_labels=[self.source_labels[m]],
        )

    def as_paired(self):
        """Declare equal-length sources time-aligned in their row order."""
        return MultiSourceDataset(
            list(self.sources), paired=True, outcome_name=self.outcome_name,
            x_names=list(self.x_names), z_names=list(self.z_names),
            source_labels=list(self.source_labels),
            time_values=self.time_values,
        )

    def with_exposure(self, x_cols, z_cols):
        """Reassign predictor columns to new exposure/adjust roles.

        x_cols/z_cols index into the concatenated [X, Z] predictor block.
        Used by the LOCO scan to rotate each predictor into the exposure
        slot while the rest adjust.
        """
        names = list(self.x_names) + list(self.z_names)
        subs = []
        for s in self.sources:
            W = np.column_stack([s.X, s.Z]) if self.k else s.X
            Z_new = W[:, z_cols] if len(z_cols) else np.empty((s.n, 0))
            subs.append(SourceDataset(s.source_id, s.y, W[:, x_cols], Z_new))
        return MultiSourceDataset(
            subs, paired=self.paired, outcome_name=self.outcome_name,
            x_names=[names[j] for j in x_cols],
            z_names=[names[j] for j in z_cols],
            source_labels=list(self.source_labels),
            time_values=self.time_values,
        )


@dataclass
class FoldAssignment:
    """K disjoint, exhaustive index sets per source; sizes differ by <= 1."""

    K: int
    folds: list  # folds[m][k] = int array of held-out row indices
    seed: int

    def __post_init__(self):
        for m, per_source in enumerate(self.folds):
            if len(per_source) != self.K:
                raise FoldError("wrong number of folds", source=m)
            all_idx = np.concatenate([np.asarray(f, dtype=int) for f in per_source])
            n = all_idx.size
            if not np.array_equal(np.sort(all_idx), np.arange(n)):
                raise FoldError("folds are not a partition", source=m)
            sizes = [len(f) for f in per_source]
            if max(sizes) - min(sizes) > 1:
                raise FoldError("fold sizes differ by more than 1", source=m)

    def train_indices(self, m, k):
        return np.sort(np.concatenate(
            [self.folds[m][j] for j in range(self.K) if j != k]))


def split_kfolds(data, K, seed):
    """Random K-fold partition per source, shared across sources when paired."""
    K = int(K)
    n_min = int(data.n_per_source.min())
    if K < 2:
        raise FoldError("K must be at least 2", K=K)
    if K > n_min:
        raise FoldError("K exceeds the smallest source size", K=K, n_min=n_min)
    rng = make_rng(seed)
    if data.paired:
        perm = rng.permutation(data.n_per_source[0])
        shared = [np.sort(f) for f in np.array_split(perm, K)]
        folds = [[f.copy() for f in shared] for _ in range(data.M)]
    else:
        folds = []
        for s in data.sources:
            perm = rng.permutation(s.n)
            folds.append([np.sort(f) for f in np.array_split(perm, K)])
    return FoldAssignment(K=K, folds=folds, seed=int(seed))


def _parse_cell(text, row_num, col_name):
    text = text.strip()
    if text == "":
        raise ParseError("missing value", row=row_num, column=col_name)
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r}", row=row_num, column=col_name)
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", row=row_num, column=col_name)
    return v


def load_multisource_csv(path, schema):
    """Read a UTF-8 comma CSV into a MultiSourceDataset.

    schema maps roles to column names: {"source": name, "outcome": name,
    "exposure": [names], "adjust": [names], "time": name or None}.
    Sources are ordered by first appearance. If a time column is given,
    every source must have exactly one row per time value over a common
    time set; rows are then sorted by time and the dataset is paired.
    """
    for role in ("source", "outcome", "exposure"):
        if not schema.get(role):
            raise ParseError(f"schema is missing the {role} role", path=str(path))
    x_names = list(schema["exposure"])
    z_names = list(schema.get("adjust") or [])
    time_name = schema.get("time")

    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError("cannot open data file", path=str(path)) from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty CSV", path=str(path))
        header = [h.strip() for h in header]
        col = {name: j for j, name in enumerate(header)}
        needed = [schema["source"], schema["outcome"]] + x_names + z_names
        if time_name:
            needed.append(time_name)
        for name in needed:
            if name not in col:
                raise ParseError(f"column {name!r} not in header",
                                 path=str(path), header=header)

        groups = {}
        order = []
        for row_num, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise ParseError("row width differs from header", row=row_num)
            label = row[col[schema["source"]]].strip()
            if label not in groups:
                groups[label] = {"y": [], "X": [], "Z": [], "t": []}
                order.append(label)
            g = groups[label]
            g["y"].append(_parse_cell(row[col[schema["outcome"]]], row_num,
                                      schema["outcome"]))
            g["X"].append([_parse_cell(row[col[c]], row_num, c) for c in x_names])
            g["Z"].append([_parse_cell(row[col[c]], row_num, c) for c in z_names])
            if time_name:
                g["t"].append(_parse_cell(row[col[time_name]], row_num, time_name))

    if len(order) < 2:
        raise ShapeError("need at least 2 sources", found=len(order), path=str(path))

    paired = False
    time_values = None
    if time_name:
        time_sets = []
        for label in order:
            t = np.asarray(groups[label]["t"])
            if np.unique(t).size != t.size:
                raise PairingError("duplicate time values within a source",
                                   source=label)
            time_sets.append(np.sort(t))
        base = time_sets[0]
        for label, ts in zip(order, time_sets):
            if ts.shape != base.shape or not np.array_equal(ts, base):
                raise PairingError("sources do not share a common time grid",
                                   source=label)
        paired = True
        time_values = base

    sources = []
    for m, label in enumerate(order):
        g = groups[label]
        y = np.asarray(g["y"])
        X = np.asarray(g["X"], dtype=float).reshape(len(g["y"]), len(x_names))
        Z = np.asarray(g["Z"], dtype=float).reshape(len(g["y"]), len(z_names))
        if paired:
            ordr = np.argsort(np.asarray(g["t"]))
            y, X, Z = y[ordr], X[ordr], Z[ordr]
        sources.append(SourceDataset(m, y, X, Z))

    return MultiSourceDataset(
        sources, paired=paired, outcome_name=schema["outcome"],
        x_names=x_names, z_names=z_names, source_labels=order,
        time_values=time_values,
    )


def write_multisource_csv(data, path):
    """Inverse of load_multisource_csv; floats via repr so reload is bit-exact."""
    header = ["source"]
    if data.paired and data.time_values is not None:
        header.append("time")
    header += [data.outcome_name] + list(data.x_names) + list(data.z_names)
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError("cannot write data file", path=str(path)) from exc
    with fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for m, s in enumerate(data.sources):
            for i in range(s.n):
                row = [data.source_labels[m]]
                if data.paired and data.time_values is not None:
                    row.append(repr(float(data.time_values[i])))
                row.append(repr(float(s.y[i])))
                row += [repr(float(v)) for v in s.X[i]]
                row += [repr(float(v)) for v in s.Z[i]]
                writer.writerow(row)
    return path
