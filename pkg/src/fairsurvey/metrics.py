"""Error, fairness, compliance and cost metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import IO, Mapping, Sequence

import numpy as np

from .simulator import TrialReport


def fairness_xi(variances: Sequence[float]) -> float:
    """Largest pairwise gap between group estimator variances (0 = perfectly fair)."""
    v = np.asarray(variances, dtype=float)
    if v.size < 2:
        raise ValueError("fairness needs at least two groups")
    return float(v.max() - v.min())


def estimator_variances(estimates: np.ndarray) -> np.ndarray:
    """Per-column population variance over trials, ignoring undefined (NaN) estimates."""
    est = np.asarray(estimates, dtype=float)
    out = np.full(est.shape[1], np.nan)
    for i in range(est.shape[1]):
        col = est[:, i]
        col = col[~np.isnan(col)]
        if col.size:
            out[i] = col.var()
    return out


def confidence_compliance(errors, gamma, alpha: float) -> list[tuple[float, bool]]:
    """Per-group violation rate ``Pr(err > gamma_i)`` and whether it is within ``alpha``.

    ``errors`` holds one sequence per group; NaN entries (no respondents)
    count as violations.
    """
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (len(errors),))
    out = []
    for e, gam in zip(errors, gamma):
        e = np.asarray(e, dtype=float)
        if e.size == 0:
            raise ValueError("empty error list")
        viol = np.isnan(e) | (e > gam)
        rate = float(viol.mean())
        out.append((rate, rate <= alpha))
    return out


def rse(sigma: float, mu: float, n: int) -> float:
    """Relative standard error of a mean: (sigma / sqrt(n)) / mu."""
    if mu == 0:
        raise ValueError("mean must be nonzero")
    if n < 1:
        raise ValueError("n must be positive")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return sigma / math.sqrt(n) / mu


def coefficient_of_variation(stats: Mapping[str, tuple[float, float]]) -> dict[str, float]:
    """sigma / mu per group, from ``{group: (mu, sigma)}``."""
    out = {}
    for g, (mu, sigma) in stats.items():
        if mu <= 0:
            raise ValueError(f"group {g!r} has nonpositive mean {mu}")
        out[g] = sigma / mu
    return out


def diversity_index(counts: Sequence[float]) -> float:
    """Simpson's diversity: chance that two random individuals are in different groups."""
    c = np.asarray(counts, dtype=float)
    total = c.sum()
    if not total > 0:
        raise ValueError("counts must have a positive total")
    share = c / total
    return float(1.0 - np.dot(share, share))


@dataclass
class FairnessReport:
    group_labels: tuple[str, ...]
    variance: np.ndarray
    relative: bool
    xi: float
    violation_rate: np.ndarray
    passed: np.ndarray
    gamma: np.ndarray
    alpha: float
    cost: float
    baseline_cost: float | None = None
    method: str = ""
    epsilon: str = ""

    @property
    def relative_cost(self) -> float | None:
        if not self.baseline_cost:
            return None
        return 100.0 * self.cost / self.baseline_cost

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "epsilon": self.epsilon,
            "variance_kind": "relative" if self.relative else "absolute",
            "xi_var": self.xi,
            "alpha": self.alpha,
            "cost": self.cost,
            "baseline_cost": self.baseline_cost,
            "relative_cost_pct": self.relative_cost,
            "all_pass": bool(np.all(self.passed)),
            "groups": {
                g: {
                    "variance": _num(self.variance[i]),
                    "gamma": float(self.gamma[i]),
                    "violation_rate": float(self.violation_rate[i]),
                    "pass": bool(self.passed[i]),
                }
                for i, g in enumerate(self.group_labels)
            },
        }

    def write_json(self, dest: IO[str]) -> None:
        json.dump(self.to_dict(), dest, indent=2)
        dest.write("\n")

    def write_csv(self, dest: IO[str]) -> None:
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(("group_id", "variance", "gamma", "violation_rate", "pass", "xi_var", "cost", "relative_cost_pct"))
        for i, g in enumerate(self.group_labels):
            w.writerow((g, _num(self.variance[i]), float(self.gamma[i]), float(self.violation_rate[i]),
                        int(self.passed[i]), "", "", ""))
        rel = self.relative_cost
        w.writerow(("ALL", "", "", float(self.violation_rate.max()), int(np.all(self.passed)),
                    self.xi, self.cost, "" if rel is None else rel))


def _num(x) -> float | None:
    x = float(x)
    return None if math.isnan(x) else x


def fairness_report(report: TrialReport, gamma, alpha: float, cost: float,
                    baseline_cost: float | None = None, relative: bool = True,
                    epsilon: str = "") -> FairnessReport:
    """Summarize a trial report. Variances are of relative estimates by default."""
    est = report.estimates / report.truth[None, :] if relative else report.estimates
    var = estimator_variances(est)
    defined = var[~np.isnan(var)]
    xi = fairness_xi(defined) if defined.size >= 2 else float("nan")
    comp = confidence_compliance(report.errors().T, gamma, alpha)
    return FairnessReport(
        group_labels=report.group_labels,
        variance=var,
        relative=relative,
        xi=xi,
        violation_rate=np.array([c[0] for c in comp]),
        passed=np.array([c[1] for c in comp]),
        gamma=np.broadcast_to(np.asarray(gamma, dtype=float), (len(report.group_labels),)).copy(),
        alpha=alpha,
        cost=cost,
        baseline_cost=baseline_cost,
        method=report.method,
        epsilon=epsilon,
    )
