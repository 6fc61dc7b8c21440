"""Monte Carlo execution of allocations against a ground-truth population.

The allocation carries whatever distortion the designer saw (noised
counts); execution always runs on the real individuals.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import IO

import numpy as np

from .allocator import DEFAULT_G, Allocation
from .population import PopulationFrame, group_stats


@dataclass(frozen=True, eq=False)
class SurveyOutcome:
    """One simulated survey. ``estimates`` is NaN where a group had no respondents."""

    successes: np.ndarray
    estimates: np.ndarray
    contacts: int
    regions: int
    seed: object = None

    @property
    def defined(self) -> np.ndarray:
        return self.successes > 0

    def realized_cost(self, c1: float, c2: float) -> float:
        return c1 * self.contacts + c2 * self.regions


def _align(truth: PopulationFrame, alloc: Allocation) -> tuple[np.ndarray, np.ndarray]:
    """Contacts per truth group and z per truth region, matched by label."""
    if set(alloc.group_labels) != set(truth.group_labels) or len(alloc.group_labels) != truth.n_groups:
        raise ValueError("allocation groups do not match the population")
    gi = {g: i for i, g in enumerate(alloc.group_labels)}
    contacts = np.asarray(alloc.contacts, dtype=float)[[gi[g] for g in truth.group_labels]]
    if not len(alloc.z):
        return contacts, np.zeros(truth.n_regions, dtype=np.int8)
    if set(alloc.region_labels) != set(truth.region_labels) or len(alloc.region_labels) != truth.n_regions:
        raise ValueError("allocation regions do not match the population")
    ri = {r: j for j, r in enumerate(alloc.region_labels)}
    return contacts, alloc.z[[ri[r] for r in truth.region_labels]]


def run_survey(truth: PopulationFrame, alloc: Allocation, f1, f2, rng: np.random.Generator,
               g=None) -> SurveyOutcome:
    """Simulate one two-phase survey.

    Phase 1 contacts ``round(contacts_i)`` distinct members of each group
    (capped at the true group size). Phase 2 contacts ``round(g_r N^r)``
    distinct residents of every selected region. Contacts respond
    independently; someone reached in both phases counts once, with the
    phase-2 response. Rounding is half-to-even. Allocation groups and
    regions are matched to the truth frame by label.
    """
    planned, z = _align(truth, alloc)
    ind = truth.individuals
    G = truth.n_groups
    f1 = np.broadcast_to(np.asarray(f1, dtype=float), (G,))
    f2 = np.broadcast_to(np.asarray(f2, dtype=float), (G,))

    contacted1 = []
    n_contacts = 0
    for i, members in enumerate(ind.by_group[:G]):
        k = min(int(np.rint(planned[i])), len(members))
        if k > 0:
            contacted1.append(members[rng.choice(len(members), k, replace=False)])
            n_contacts += k
    idx1 = np.concatenate(contacted1) if contacted1 else np.empty(0, dtype=np.int64)
    resp1 = rng.random(len(idx1)) >= f1[ind.group[idx1]]

    selected = np.flatnonzero(z)
    if len(selected):
        rates = np.broadcast_to(np.asarray(DEFAULT_G if g is None else g, dtype=float), (truth.n_regions,))
        contacted2 = []
        for r in selected:
            members = ind.by_region[r]
            k = int(np.rint(rates[r] * len(members)))
            if k > 0:
                contacted2.append(members[rng.choice(len(members), k, replace=False)])
        idx2 = np.concatenate(contacted2) if contacted2 else np.empty(0, dtype=np.int64)
    else:
        idx2 = np.empty(0, dtype=np.int64)
    resp2 = rng.random(len(idx2)) >= f2[ind.group[idx2]]

    # phase-2 outcome overrides phase 1 for anyone contacted twice
    keep1 = idx1[resp1]
    if len(idx2):
        keep1 = keep1[~np.isin(keep1, idx2)]
    responders = np.concatenate([keep1, idx2[resp2]])

    grp = ind.group[responders]
    succ = np.bincount(grp, minlength=G)
    sums = np.bincount(grp, weights=ind.value[responders], minlength=G)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = np.where(succ > 0, sums / np.maximum(succ, 1), np.nan)
    return SurveyOutcome(succ, est, n_contacts, len(selected))


@dataclass(frozen=True, eq=False)
class TrialReport:
    """Per-trial, per-group estimates from repeated surveys."""

    group_labels: tuple[str, ...]
    truth: np.ndarray
    successes: np.ndarray
    estimates: np.ndarray
    contacts: np.ndarray
    regions: np.ndarray
    method: str = ""
    seed: object = None

    @property
    def trials(self) -> int:
        return self.estimates.shape[0]

    def errors(self) -> np.ndarray:
        """|estimate - truth|; NaN for undefined estimates."""
        return np.abs(self.estimates - self.truth[None, :])

    def relative_errors(self) -> np.ndarray:
        return self.errors() / np.abs(self.truth)[None, :]

    def outcome(self, t: int) -> SurveyOutcome:
        return SurveyOutcome(self.successes[t], self.estimates[t], int(self.contacts[t]), int(self.regions[t]))

    def write_csv(self, dest: IO[str]) -> None:
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(("trial", "group_id", "successes", "estimate", "error", "relative_error"))
        err = self.errors()
        rel = self.relative_errors()
        for t in range(self.trials):
            for i, g in enumerate(self.group_labels):
                defined = self.successes[t, i] > 0
                w.writerow((
                    t, g, int(self.successes[t, i]),
                    repr(float(self.estimates[t, i])) if defined else "",
                    repr(float(err[t, i])) if defined else "",
                    repr(float(rel[t, i])) if defined else "",
                ))

    def aggregate(self) -> dict:
        err = self.errors()
        rel = self.relative_errors()
        out = {"method": self.method, "trials": self.trials, "groups": {}}
        for i, g in enumerate(self.group_labels):
            ok = self.successes[:, i] > 0
            out["groups"][g] = {
                "truth": float(self.truth[i]),
                "mean_successes": float(self.successes[:, i].mean()),
                "undefined": int((~ok).sum()),
                "mean_error": float(err[ok, i].mean()) if ok.any() else None,
                "mean_relative_error": float(rel[ok, i].mean()) if ok.any() else None,
            }
        out["mean_contacts"] = float(self.contacts.mean())
        return out

    def write_json(self, dest: IO[str]) -> None:
        json.dump(self.aggregate(), dest, indent=2)
        dest.write("\n")


def trial_rngs(seed, trials: int) -> list[np.random.Generator]:
    """Independent per-trial generators derived from one seed (int or SeedSequence)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(trials)]


def replicate(truth: PopulationFrame, alloc: Allocation, f1, f2, trials: int, seed=0,
              g=None) -> TrialReport:
    """Run ``trials`` independent surveys, trial ``t`` on its own derived stream."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    stats = group_stats(truth)
    truth_means = np.array([stats[gl].mean for gl in truth.group_labels])
    G = truth.n_groups
    succ = np.zeros((trials, G), dtype=np.int64)
    est = np.zeros((trials, G))
    contacts = np.zeros(trials, dtype=np.int64)
    regions = np.zeros(trials, dtype=np.int64)
    for t, rng in enumerate(trial_rngs(seed, trials)):
        out = run_survey(truth, alloc, f1, f2, rng, g=g)
        succ[t], est[t], contacts[t], regions[t] = out.successes, out.estimates, out.contacts, out.regions
    return TrialReport(tuple(truth.group_labels), truth_means, succ, est, contacts, regions, alloc.method, seed)
