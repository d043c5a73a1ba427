"""Datasets with protected-group attributes: loading, standardization,
splitting into private/public sets, teacher shards and a synthetic generator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed input files or infeasible dataset operations."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with integer labels and group attributes.

    ``rows`` holds the indices of each row in the dataset it was derived
    from (the loaded/synthesized one), so splits can be traced back.
    """

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    names: tuple[str, ...]
    class_count: int
    group_count: int
    label_names: tuple[str, ...] = ()
    group_names: tuple[str, ...] = ()
    rows: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=float)
        if x.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {x.shape}")
        n, d = x.shape
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        g = np.asarray(self.groups, dtype=np.int64).reshape(-1)
        if y.shape[0] != n or g.shape[0] != n:
            raise DatasetError("features, labels and groups must have the same number of rows")
        if len(self.names) != d:
            raise DatasetError(f"{len(self.names)} feature names for {d} columns")
        if n and (y.min() < 0 or y.max() >= self.class_count):
            raise DatasetError(f"labels must lie in [0, {self.class_count})")
        if n and (g.min() < 0 or g.max() >= self.group_count):
            raise DatasetError(f"groups must lie in [0, {self.group_count})")
        rows = np.arange(n) if self.rows is None else np.asarray(self.rows, dtype=np.int64)
        for arr in (x, y, g, rows):
            arr.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "groups", g)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, index: np.ndarray) -> "Dataset":
        """Rows at ``index`` (in that order) as a new dataset."""
        index = np.asarray(index, dtype=np.int64)
        return replace(
            self,
            features=self.features[index],
            labels=self.labels[index],
            groups=self.groups[index],
            rows=self.rows[index],
        )


@dataclass(frozen=True)
class SplitSpec:
    private_fraction: float = 0.75
    public_train_count: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.private_fraction < 1.0:
            raise DatasetError(f"private_fraction must be in (0, 1), got {self.private_fraction}")
        if self.public_train_count < 0:
            raise DatasetError("public_train_count must be nonnegative")


@dataclass(frozen=True)
class SynthConfig:
    """Gaussian class clusters whose per-group scale controls input norms."""

    n: int = 1000
    d: int = 10
    class_count: int = 2
    group_fractions: tuple[float, ...] = (0.75, 0.25)
    norm_scale_per_group: tuple[float, ...] = (1.0, 3.0)
    label_noise: float = 0.0
    class_sep: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1 or self.d < 1 or self.class_count < 2:
            raise DatasetError("need n >= 1, d >= 1 and class_count >= 2")
        fr = np.asarray(self.group_fractions, dtype=float)
        if fr.ndim != 1 or fr.size == 0 or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
            raise DatasetError(f"group_fractions must be nonnegative and sum to 1, got {self.group_fractions}")
        if len(self.norm_scale_per_group) != fr.size:
            raise DatasetError("norm_scale_per_group needs one entry per group")
        if any(s <= 0 for s in self.norm_scale_per_group):
            raise DatasetError("norm scales must be positive")
        if not 0.0 <= self.label_noise < 0.5:
            raise DatasetError(f"label_noise must be in [0, 0.5), got {self.label_noise}")


def _dense_codes(values: Sequence[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    mapping: dict[str, int] = {}
    codes = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        codes[i] = mapping.setdefault(v, len(mapping))
    return codes, tuple(mapping)


def load_csv(
    path: str | Path,
    label_column: str,
    group_column: str,
    include_group_feature: bool = False,
) -> Dataset:
    """Read a header-first CSV into an unstandardized :class:`Dataset`.

    Labels and groups are coded densely by order of first appearance. All
    other columns must be numeric. With ``include_group_feature`` the group
    code is also appended as the last feature column.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file")
        header = [h.strip() for h in header]
        for col in (label_column, group_column):
            if col not in header:
                raise DatasetError(f"{path}: missing column {col!r}")
        li, gi = header.index(label_column), header.index(group_column)
        feat_idx = [j for j in range(len(header)) if j not in (li, gi)]
        rows, labels, groups = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DatasetError(f"{path}: row {lineno} has {len(rec)} cells, expected {len(header)}")
            vals = []
            for j in feat_idx:
                cell = rec[j].strip()
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DatasetError(
                        f"{path}: row {lineno}, column {header[j]!r}: non-numeric value {cell!r}"
                    ) from None
            rows.append(vals)
            labels.append(rec[li].strip())
            groups.append(rec[gi].strip())
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    y, label_names = _dense_codes(labels)
    g, group_names = _dense_codes(groups)
    x = np.asarray(rows, dtype=float).reshape(len(rows), len(feat_idx))
    names = tuple(header[j] for j in feat_idx)
    if include_group_feature:
        x = np.column_stack([x, g.astype(float)])
        names = names + (group_column,)
    return Dataset(
        features=x,
        labels=y,
        groups=g,
        names=names,
        class_count=len(label_names),
        group_count=len(group_names),
        label_names=label_names,
        group_names=group_names,
    )


def save_csv(ds: Dataset, path: str | Path, label_column: str = "label", group_column: str = "group") -> None:
    """Write ``ds`` in the format :func:`load_csv` reads (codes as labels)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*ds.names, label_column, group_column])
        for row, y, g in zip(ds.features, ds.labels, ds.groups):
            w.writerow([*(repr(float(v)) for v in row), int(y), int(g)])


def standardize(ds: Dataset) -> Dataset:
    """Center each column and divide by its sample (n-1) standard deviation.

    Constant columns become all zeros.
    """
    if ds.n < 2:
        raise DatasetError(f"standardize needs at least 2 rows, got {ds.n}")
    x = ds.features
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1)
    centered = x - mean
    scale = np.where(std > 0, std, 1.0)
    out = np.where(std > 0, centered / scale, 0.0)
    return replace(ds, features=out)


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded partition into (private, public_train, public_test)."""
    n_priv = int(np.floor(ds.n * spec.private_fraction))
    if spec.public_train_count > ds.n - n_priv:
        raise DatasetError(
            f"public_train_count={spec.public_train_count} exceeds the {ds.n - n_priv} public rows"
        )
    perm = np.random.default_rng(spec.seed).permutation(ds.n)
    cut = n_priv + spec.public_train_count
    return ds.take(perm[:n_priv]), ds.take(perm[n_priv:cut]), ds.take(perm[cut:])


def partition_teachers(private: Dataset, k: int, seed: int) -> list[Dataset]:
    """Split ``private`` into ``k`` disjoint shards whose sizes differ by at most one."""
    if k < 1:
        raise DatasetError(f"k must be >= 1, got {k}")
    if k > private.n:
        raise DatasetError(f"cannot make {k} shards from {private.n} rows")
    perm = np.random.default_rng(seed).permutation(private.n)
    return [private.take(perm[i::k]) for i in range(k)]


def _group_counts(n: int, fractions: Sequence[float]) -> np.ndarray:
    # largest-remainder rounding
    raw = np.asarray(fractions, dtype=float) * n
    counts = np.floor(raw).astype(np.int64)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: n - counts.sum()]] += 1
    return counts


def synthesize(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    C, d = cfg.class_count, cfg.d
    if C == 2:
        u = rng.normal(size=d)
        u /= np.linalg.norm(u)
        centers = np.stack([-u, u]) * (cfg.class_sep / 2.0)
    else:
        dirs = rng.normal(size=(C, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        centers = dirs * (cfg.class_sep / 2.0)

    counts = _group_counts(cfg.n, cfg.group_fractions)
    groups = rng.permutation(np.repeat(np.arange(len(counts)), counts))
    labels = rng.integers(0, C, size=cfg.n)
    x = centers[labels] + rng.normal(size=(cfg.n, d))
    x *= np.asarray(cfg.norm_scale_per_group, dtype=float)[groups][:, None]

    flip = rng.random(cfg.n) < cfg.label_noise
    shift = rng.integers(1, C, size=cfg.n)
    labels = np.where(flip, (labels + shift) % C, labels)
    return Dataset(
        features=x,
        labels=labels,
        groups=groups,
        names=tuple(f"x{j}" for j in range(d)),
        class_count=C,
        group_count=len(counts),
        label_names=tuple(str(c) for c in range(C)),
        group_names=tuple(str(a) for a in range(len(counts))),
    )


def group_subset(ds: Dataset, a: int) -> Dataset:
    if not 0 <= a < ds.group_count:
        raise DatasetError(f"unknown group id {a}; dataset has {ds.group_count} groups")
    return ds.take(np.flatnonzero(ds.groups == a))
