"""Empirical variance proxies for group-mean estimators.

Measures how the variance of a group's sample mean falls with the
sampling rate ``x`` on prior data, fits ``a / x`` to those points, and
turns the fit into a minimum number of successful samples via
Chebyshev's inequality.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .population import PopulationFrame

DEFAULT_RATES = tuple(np.round(np.linspace(0.005, 0.1, 20), 6))
DEFAULT_TRIALS = 200


@dataclass(frozen=True)
class VariancePoint:
    rate: float
    variance: float

    def __post_init__(self):
        if not 0 < self.rate <= 1:
            raise ValueError(f"rate must lie in (0, 1], got {self.rate}")
        if self.variance < 0:
            raise ValueError("variance must be non-negative")


@dataclass(frozen=True)
class ProxyCurve:
    """Fitted ``variance(x) = a / x`` for one group."""

    a: float
    rss: float
    n_points: int
    group: str | None = None

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("proxy coefficient must be non-negative")

    def predict(self, rate):
        return self.a / np.asarray(rate, dtype=float)

    def constant(self, n_group: float) -> float:
        """Variance constant C = a * N, so that variance = C / n."""
        return self.a * n_group


def measure_variance(
    prior: PopulationFrame,
    group: str,
    rates: Sequence[float] = DEFAULT_RATES,
    trials: int = DEFAULT_TRIALS,
    rng: np.random.Generator | None = None,
    n_group: float | None = None,
) -> list[VariancePoint]:
    """Variance of the group mean under simple random sampling without replacement.

    For each rate the sample size is ``round(rate * n_group)``, capped at
    the number of individuals actually in the group. ``n_group`` defaults
    to the true group size; pass the designer-visible (possibly noised)
    size to express rates on the scale the design will use.

    Each trial runs on its own stream spawned from ``rng`` and draws one
    uniformly random ordering of the group; its first ``k`` members form
    the size-``k`` sample for every rate. Trials are independent, and the
    same ``rng`` state reuses the same orderings when ``n_group`` changes.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    try:
        gi = prior.group_labels.index(group)
    except ValueError:
        raise KeyError(f"unknown group {group!r}") from None
    ind = prior.individuals
    values = ind.value[ind.by_group[gi]] if gi < len(ind.by_group) else np.empty(0)
    if len(values) == 0:
        raise ValueError(f"group {group!r} is empty")
    ref = len(values) if n_group is None else n_group

    rates = [float(x) for x in rates]
    sizes = np.array([min(int(round(x * ref)), len(values)) for x in rates], dtype=np.int64)
    for x, k in zip(rates, sizes):
        if k < 2:
            raise ValueError(f"rate {x} gives sample size {k} < 2 for group {group!r}")
    partial = sizes < len(values)
    kmax = int(sizes[partial].max()) if partial.any() else 0
    means = np.empty((trials, len(sizes)))
    if kmax:
        for t, trial_rng in enumerate(rng.spawn(trials)):
            prefix = np.cumsum(values[trial_rng.permutation(len(values))[:kmax]])
            means[t, partial] = prefix[sizes[partial] - 1] / sizes[partial]
    # a census is exact in every trial
    return [
        VariancePoint(x, float(means[:, j].var()) if partial[j] else 0.0)
        for j, x in enumerate(rates)
    ]


def fit_inverse_curve(points: Iterable[VariancePoint], group: str | None = None) -> ProxyCurve:
    """Least-squares fit of ``v = a / x``; the closed form is clamped at zero."""
    points = list(points)
    if not points:
        raise ValueError("need at least one variance point")
    inv = np.array([1.0 / p.rate for p in points])
    v = np.array([p.variance for p in points])
    a = max(0.0, float(np.dot(v, inv) / np.dot(inv, inv)))
    rss = float(np.sum((v - a * inv) ** 2))
    return ProxyCurve(a, rss, len(points), group)


def r_squared(curve: ProxyCurve, points: Sequence[VariancePoint]) -> float:
    v = np.array([p.variance for p in points])
    pred = curve.predict([p.rate for p in points])
    tss = float(np.sum((v - v.mean()) ** 2))
    rss = float(np.sum((v - pred) ** 2))
    return 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)


def required_samples(curve: ProxyCurve | float, n_group: float, alpha: float, gamma: float) -> float:
    """Minimum expected successes so that Chebyshev bounds Pr(err > gamma) by alpha.

    ``curve`` may be a fitted :class:`ProxyCurve` or its coefficient.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    if n_group < 0:
        raise ValueError("group size must be non-negative")
    a = curve.a if isinstance(curve, ProxyCurve) else float(curve)
    return a * n_group / (alpha * gamma * gamma)


def write_curves(curves: Iterable[ProxyCurve], dest: IO[str]) -> None:
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(("group_id", "a", "rss", "n_points"))
    for c in curves:
        w.writerow((c.group, repr(c.a), repr(c.rss), c.n_points))


def read_curves(src: IO[str]) -> dict[str, ProxyCurve]:
    reader = csv.DictReader(src)
    if reader.fieldnames is None or set(reader.fieldnames) != {"group_id", "a", "rss", "n_points"}:
        raise ValueError(f"unexpected proxy columns: {reader.fieldnames}")
    return {
        row["group_id"]: ProxyCurve(float(row["a"]), float(row["rss"]), int(row["n_points"]), row["group_id"])
        for row in reader
    }
