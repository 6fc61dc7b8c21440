"""Populations segmented by group and region.

A :class:`PopulationFrame` holds weighted microdata records. Aggregate
statistics treat a record of weight ``w`` as ``w`` individuals; the
expanded per-individual view is built lazily for the samplers.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property
from typing import IO, Iterable, Sequence

import numpy as np

CSV_COLUMNS = ("region_id", "group_id", "value", "weight")


class PopulationError(ValueError):
    """Invalid population data."""


class ParseError(PopulationError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(PopulationError):
    pass


class EmptyInputError(PopulationError):
    pass


@dataclass(frozen=True, eq=False)
class PopulationFrame:
    """Weighted microdata records with ordered group and region labels.

    ``group`` and ``region`` are integer indices into ``group_labels`` and
    ``region_labels``.
    """

    group_labels: tuple[str, ...]
    region_labels: tuple[str, ...]
    group: np.ndarray
    region: np.ndarray
    value: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        for name in ("group", "region", "value", "weight"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "group_labels", tuple(self.group_labels))
        object.__setattr__(self, "region_labels", tuple(self.region_labels))
        n = len(self.value)
        if not (len(self.group) == len(self.region) == len(self.weight) == n):
            raise PopulationError("record arrays differ in length")
        if not self.group_labels or not self.region_labels:
            raise PopulationError("need at least one group and one region label")
        if len(set(self.group_labels)) != len(self.group_labels):
            raise PopulationError("duplicate group labels")
        if len(set(self.region_labels)) != len(self.region_labels):
            raise PopulationError("duplicate region labels")
        if n == 0:
            raise EmptyInputError("population has no records")
        if self.group.min() < 0 or self.group.max() >= len(self.group_labels):
            raise PopulationError("record group outside label list")
        if self.region.min() < 0 or self.region.max() >= len(self.region_labels):
            raise PopulationError("record region outside label list")
        if self.weight.min() < 1:
            raise PopulationError("weights must be positive integers")
        if not np.all(np.isfinite(self.value)):
            raise PopulationError("values must be finite")

    @classmethod
    def from_records(
        cls,
        records: Iterable[tuple[str, str, float, int]],
        group_labels: Sequence[str] | None = None,
        region_labels: Sequence[str] | None = None,
    ) -> "PopulationFrame":
        """Build a frame from ``(region_id, group_id, value, weight)`` tuples.

        Labels default to first-appearance order.
        """
        records = list(records)
        if group_labels is None:
            group_labels = list(dict.fromkeys(r[1] for r in records))
        if region_labels is None:
            region_labels = list(dict.fromkeys(r[0] for r in records))
        gidx = {g: i for i, g in enumerate(group_labels)}
        ridx = {r: i for i, r in enumerate(region_labels)}
        try:
            group = np.array([gidx[r[1]] for r in records], dtype=np.int64)
            region = np.array([ridx[r[0]] for r in records], dtype=np.int64)
        except KeyError as exc:
            raise PopulationError(f"label {exc.args[0]!r} not in label list") from None
        value = np.array([float(r[2]) for r in records], dtype=float)
        weight = np.array([int(r[3]) for r in records], dtype=np.int64)
        return cls(tuple(group_labels), tuple(region_labels), group, region, value, weight)

    @property
    def n_groups(self) -> int:
        return len(self.group_labels)

    @property
    def n_regions(self) -> int:
        return len(self.region_labels)

    @property
    def size(self) -> int:
        """Total population N (sum of weights)."""
        return int(self.weight.sum())

    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.group, weights=self.weight, minlength=self.n_groups).astype(np.int64)

    def region_sizes(self) -> np.ndarray:
        return np.bincount(self.region, weights=self.weight, minlength=self.n_regions).astype(np.int64)

    @cached_property
    def individuals(self) -> "Individuals":
        """Weight-expanded view: one entry per individual."""
        if np.all(self.weight == 1):
            return Individuals(self.group, self.region, self.value)
        rep = self.weight
        return Individuals(np.repeat(self.group, rep), np.repeat(self.region, rep), np.repeat(self.value, rep))

    def with_regions(self, region: np.ndarray, region_labels: Sequence[str]) -> "PopulationFrame":
        return PopulationFrame(self.group_labels, tuple(region_labels), self.group, region, self.value, self.weight)


@dataclass(frozen=True)
class Individuals:
    group: np.ndarray
    region: np.ndarray
    value: np.ndarray

    @cached_property
    def by_group(self) -> list[np.ndarray]:
        """Individual indices per group index."""
        order = np.argsort(self.group, kind="stable")
        counts = np.bincount(self.group)
        return np.split(order, np.cumsum(counts)[:-1])

    @cached_property
    def by_region(self) -> list[np.ndarray]:
        order = np.argsort(self.region, kind="stable")
        counts = np.bincount(self.region)
        return np.split(order, np.cumsum(counts)[:-1])

    def __len__(self) -> int:
        return len(self.value)


@dataclass(frozen=True, eq=False)
class CountMatrix:
    """Group-by-region counts, exact or differentially private.

    ``epsilon`` is ``None`` for exact counts; noised matrices record the
    privacy loss used (which may be the no-privacy sentinel).
    """

    counts: np.ndarray
    group_labels: tuple[str, ...]
    region_labels: tuple[str, ...]
    noised: bool = False
    epsilon: object = None

    def __post_init__(self):
        counts = np.array(self.counts, dtype=float)
        if counts.shape != (len(self.group_labels), len(self.region_labels)):
            raise ValueError(
                f"counts shape {counts.shape} does not match "
                f"{len(self.group_labels)} groups x {len(self.region_labels)} regions"
            )
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ValueError("counts must be finite and non-negative")
        if not self.noised and not np.all(counts == np.round(counts)):
            raise ValueError("exact counts must be integers")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "group_labels", tuple(self.group_labels))
        object.__setattr__(self, "region_labels", tuple(self.region_labels))

    def group_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


@dataclass(frozen=True)
class GroupSpec:
    size: int
    mean: float
    sd: float
    label: str | None = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("group size must be >= 1")
        if self.sd < 0:
            raise ValueError("group sd must be >= 0")
        if self.mean <= 0:
            raise ValueError("log-normal values need a positive mean")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic population with known per-group moments.

    Either ``n_regions`` or ``region_size`` fixes the partition; with
    ``region_size`` the region count is ``ceil(N / region_size)``.
    ``mixing`` = 0 gives each group its own block of regions, 1 spreads
    every group evenly over all regions.
    """

    groups: tuple[GroupSpec, ...]
    n_regions: int | None = None
    region_size: int | None = None
    mixing: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if not self.groups:
            raise ValueError("need at least one group")
        if not 0.0 <= self.mixing <= 1.0:
            raise ValueError("mixing must lie in [0, 1]")
        if (self.n_regions is None) == (self.region_size is None):
            raise ValueError("give exactly one of n_regions or region_size")
        if self.n_regions is not None and self.n_regions < 1:
            raise ValueError("n_regions must be >= 1")
        if self.region_size is not None and self.region_size < 1:
            raise ValueError("region_size must be >= 1")

    @property
    def total(self) -> int:
        return sum(g.size for g in self.groups)

    def resolved_regions(self) -> int:
        if self.n_regions is not None:
            return self.n_regions
        return max(1, math.ceil(self.total / self.region_size))

    def labels(self) -> list[str]:
        return [g.label if g.label is not None else f"g{i}" for i, g in enumerate(self.groups)]


def lognormal_params(mean: float, sd: float) -> tuple[float, float]:
    """Log-space (mu, sigma) giving a log-normal with the given mean and SD."""
    s2 = math.log1p((sd / mean) ** 2)
    return math.log(mean) - s2 / 2, math.sqrt(s2)


def _home_blocks(sizes: np.ndarray, n_regions: int) -> list[np.ndarray]:
    # Largest-remainder split of regions, proportional to group size, at least one each.
    g = len(sizes)
    if n_regions < g:
        raise ValueError(f"mixing < 1 needs at least one region per group ({g} groups, {n_regions} regions)")
    quota = sizes / sizes.sum() * n_regions
    alloc = np.maximum(1, np.floor(quota).astype(int))
    while alloc.sum() > n_regions:
        alloc[np.argmax(alloc - quota)] -= 1
    rem = quota - alloc
    for i in np.argsort(-rem, kind="stable")[: n_regions - alloc.sum()]:
        alloc[i] += 1
    edges = np.concatenate([[0], np.cumsum(alloc)])
    return [np.arange(edges[i], edges[i + 1]) for i in range(g)]


def _spread(regions: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # Evenly spread k individuals over the given regions (counts differ by at most one).
    if k == 0:
        return np.empty(0, dtype=np.int64)
    tiled = regions[np.arange(k) % len(regions)]
    return rng.permutation(tiled)


def generate_synthetic(spec: SyntheticSpec, seed: int | None = None) -> PopulationFrame:
    """Draw a weight-1 population following ``spec``.

    ``seed`` overrides ``spec.seed``; used to draw independent prior/truth
    populations from one recipe.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    sizes = np.array([g.size for g in spec.groups], dtype=np.int64)
    n_regions = spec.resolved_regions()
    all_regions = np.arange(n_regions)
    homes = _home_blocks(sizes, n_regions) if spec.mixing < 1.0 else None

    groups, regions, values = [], [], []
    for i, g in enumerate(spec.groups):
        mu, sigma = lognormal_params(g.mean, g.sd)
        vals = np.full(g.size, g.mean) if sigma == 0 else rng.lognormal(mu, sigma, g.size)
        n_mixed = g.size if homes is None else int(rng.binomial(g.size, spec.mixing))
        reg = np.concatenate([
            _spread(all_regions, n_mixed, rng),
            _spread(homes[i], g.size - n_mixed, rng) if homes is not None else np.empty(0, np.int64),
        ])
        groups.append(np.full(g.size, i, dtype=np.int64))
        regions.append(reg.astype(np.int64))
        values.append(vals)

    width = len(str(n_regions - 1))
    return PopulationFrame(
        tuple(spec.labels()),
        tuple(f"r{j:0{width}d}" for j in range(n_regions)),
        np.concatenate(groups),
        np.concatenate(regions),
        np.concatenate(values),
        np.ones(int(sizes.sum()), dtype=np.int64),
    )


def count_matrix(frame: PopulationFrame) -> CountMatrix:
    flat = frame.group * frame.n_regions + frame.region
    counts = np.bincount(flat, weights=frame.weight, minlength=frame.n_groups * frame.n_regions)
    return CountMatrix(
        np.round(counts).reshape(frame.n_groups, frame.n_regions),
        frame.group_labels,
        frame.region_labels,
    )


@dataclass(frozen=True)
class GroupStats:
    mean: float
    variance: float
    count: int

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


def group_stats(frame: PopulationFrame) -> dict[str, GroupStats]:
    """Weighted population mean and population variance (divide by N_i) per group."""
    w = frame.weight.astype(float)
    n = np.bincount(frame.group, weights=w, minlength=frame.n_groups)
    empty = [frame.group_labels[i] for i in np.flatnonzero(n == 0)]
    if empty:
        raise PopulationError(f"empty group(s): {', '.join(empty)}")
    s1 = np.bincount(frame.group, weights=w * frame.value, minlength=frame.n_groups)
    mean = s1 / n
    dev = frame.value - mean[frame.group]
    var = np.bincount(frame.group, weights=w * dev * dev, minlength=frame.n_groups) / n
    return {
        label: GroupStats(float(mean[i]), float(var[i]), int(n[i]))
        for i, label in enumerate(frame.group_labels)
    }


def repartition(frame: PopulationFrame, region_size: int) -> PopulationFrame:
    """Re-cut the individuals into consecutive regions of ``region_size`` people.

    Individuals are ordered by their current region first, so coarser or
    finer partitions keep the original spatial concentration of groups.
    Requires a weight-1 frame.
    """
    if region_size < 1:
        raise ValueError("region_size must be >= 1")
    if not np.all(frame.weight == 1):
        raise PopulationError("repartition needs a weight-1 frame")
    order = np.argsort(frame.region, kind="stable")
    n_regions = max(1, math.ceil(len(order) / region_size))
    region = np.empty(len(order), dtype=np.int64)
    region[order] = np.arange(len(order)) // region_size
    width = len(str(n_regions - 1))
    return frame.with_regions(region, [f"r{j:0{width}d}" for j in range(n_regions)])


def load_microdata(source: IO[str] | IO[bytes] | str) -> PopulationFrame:
    """Parse ``region_id,group_id,value,weight`` CSV into a frame."""
    if isinstance(source, str):
        text = source
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyInputError("empty microdata file") from None
    header = [h.strip() for h in header]
    unknown = [h for h in header if h not in CSV_COLUMNS]
    if unknown:
        raise SchemaError(f"unknown column(s): {', '.join(unknown)}")
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    col = {c: header.index(c) for c in CSV_COLUMNS}

    records = []
    for row in reader:
        line = reader.line_num
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(header):
            raise ParseError(line, f"expected {len(header)} fields, got {len(row)}")
        try:
            value = float(row[col["value"]])
        except ValueError:
            raise ParseError(line, f"bad value {row[col['value']]!r}") from None
        raw_w = row[col["weight"]].strip()
        try:
            weight = int(raw_w)
        except ValueError:
            raise ParseError(line, f"weight {raw_w!r} is not an integer") from None
        if weight < 1:
            raise ParseError(line, f"weight must be positive, got {weight}")
        if not math.isfinite(value):
            raise ParseError(line, "value must be finite")
        records.append((row[col["region_id"]].strip(), row[col["group_id"]].strip(), value, weight))
    if not records:
        raise EmptyInputError("microdata file has a header but no records")
    return PopulationFrame.from_records(records)


def save_microdata(frame: PopulationFrame, dest: IO[str]) -> None:
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for g, r, v, w in zip(frame.group, frame.region, frame.value, frame.weight):
        writer.writerow((frame.region_labels[r], frame.group_labels[g], repr(float(v)), int(w)))
