"""Survey allocations: baselines and the cost-minimizing two-phase design.

Phase 1 contacts a fraction ``p_i`` of each group remotely (cost ``c1``
per contact, failure rate ``F1_i``). Phase 2 deploys workers to selected
regions (fixed cost ``c2`` per region), sampling a fraction ``g_r`` of
residents with failure rate ``F2_i``. Each group needs ``req_i`` expected
successful samples.

For a fixed region selection the cheapest phase-1 fractions follow in
closed form, so the mixed-integer program reduces to a set function over
regions, minimized here by depth-first branch and bound.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import IO

import numpy as np
from scipy.optimize import linprog

from .population import CountMatrix

DEFAULT_F1 = 0.60
DEFAULT_F2 = 0.20
DEFAULT_C1 = 1.0
DEFAULT_C2 = 500.0
DEFAULT_G = 0.1
DEFAULT_NODE_LIMIT = 1_000_000
BRUTE_FORCE_MAX_REGIONS = 20

_FEAS_TOL = 1e-9


class InfeasibleDesignError(ValueError):
    """No allocation meets every group's requirement."""

    def __init__(self, message: str, shortfall: dict[str, float] | None = None,
                 max_successes: dict[str, float] | None = None):
        super().__init__(message)
        self.shortfall = shortfall or {}
        self.max_successes = max_successes or {}


def _per_group(value, g: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (g,)).copy()
    if arr.shape != (g,):
        raise ValueError(f"{name} must be scalar or have one entry per group")
    return arr


@dataclass(frozen=True, eq=False)
class DesignInstance:
    """Everything the optimizer sees: designer-visible counts, rates, costs, requirements."""

    counts: CountMatrix
    f1: np.ndarray
    f2: np.ndarray
    c1: float
    c2: float
    g: np.ndarray
    req: np.ndarray

    def __post_init__(self):
        G, R = self.counts.shape
        f1 = _per_group(self.f1, G, "f1")
        f2 = _per_group(self.f2, G, "f2")
        req = _per_group(self.req, G, "req")
        g = np.broadcast_to(np.asarray(self.g, dtype=float), (R,)).copy()
        if np.any((f1 < 0) | (f1 >= 1)) or np.any((f2 < 0) | (f2 >= 1)):
            raise ValueError("failure rates must lie in [0, 1)")
        if np.any(req < 0) or not np.all(np.isfinite(req)):
            raise ValueError("requirements must be finite and non-negative")
        if np.any((g <= 0) | (g > 1)):
            raise ValueError("phase-2 sampling rates must lie in (0, 1]")
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("costs must be positive")
        for name, arr in (("f1", f1), ("f2", f2), ("req", req), ("g", g)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def build(cls, counts: CountMatrix, req, f1=DEFAULT_F1, f2=DEFAULT_F2,
              c1=DEFAULT_C1, c2=DEFAULT_C2, g=DEFAULT_G) -> "DesignInstance":
        return cls(counts, f1, f2, float(c1), float(c2), g, req)

    @property
    def n_groups(self) -> int:
        return self.counts.shape[0]

    @property
    def n_regions(self) -> int:
        return self.counts.shape[1]

    @property
    def group_sizes(self) -> np.ndarray:
        return self.counts.group_totals()

    def phase2_yield(self) -> np.ndarray:
        """G x R expected successes contributed by selecting each region."""
        return self.counts.counts * self.g[None, :] * (1.0 - self.f2)[:, None]

    def phase1_capacity(self) -> np.ndarray:
        """Most phase-1 successes per group (everyone contacted)."""
        return self.group_sizes * (1.0 - self.f1)


@dataclass(frozen=True, eq=False)
class Allocation:
    """Contact fractions ``p``, region selection ``z`` and their consequences.

    ``contacts`` is the planned number of phase-1 contacts per group,
    ``p_i`` times the designer-visible group size.
    """

    p: np.ndarray
    z: np.ndarray
    method: str
    n: np.ndarray
    cost: float
    contacts: np.ndarray
    group_labels: tuple[str, ...]
    region_labels: tuple[str, ...]
    optimal: bool = True
    nodes: int = 0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        z = np.asarray(self.z, dtype=np.int8)
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ValueError("p must lie in [0, 1]")
        if np.any((z != 0) & (z != 1)):
            raise ValueError("z must be binary")
        object.__setattr__(self, "p", np.clip(p, 0.0, 1.0))
        object.__setattr__(self, "z", z)

    @property
    def selected_regions(self) -> list[str]:
        return [self.region_labels[r] for r in np.flatnonzero(self.z)]

    def summary(self) -> dict:
        return {
            "method": self.method,
            "cost": self.cost,
            "optimal": self.optimal,
            "nodes": self.nodes,
            "n_selected_regions": int(self.z.sum()),
            "expected_successes": dict(zip(self.group_labels, map(float, self.n))),
            "contacts": dict(zip(self.group_labels, map(float, self.contacts))),
        }

    def write(self, p_dest: IO[str], z_dest: IO[str], summary_dest: IO[str]) -> None:
        w = csv.writer(p_dest, lineterminator="\n")
        w.writerow(("group_id", "p"))
        w.writerows((g, repr(float(v))) for g, v in zip(self.group_labels, self.p))
        w = csv.writer(z_dest, lineterminator="\n")
        w.writerow(("region_id", "z"))
        w.writerows((r, int(v)) for r, v in zip(self.region_labels, self.z))
        json.dump(self.summary(), summary_dest, indent=2)
        summary_dest.write("\n")


def read_allocation(p_src: IO[str], z_src: IO[str], summary_src: IO[str], inst: DesignInstance) -> Allocation:
    p_rows = {r["group_id"]: float(r["p"]) for r in csv.DictReader(p_src)}
    z_rows = {r["region_id"]: int(r["z"]) for r in csv.DictReader(z_src)}
    summary = json.load(summary_src)
    labels = inst.counts.group_labels
    regions = inst.counts.region_labels
    p = np.array([p_rows[g] for g in labels])
    z = np.array([z_rows[r] for r in regions])
    return make_allocation(inst, p, z, summary["method"], optimal=summary.get("optimal", True),
                           nodes=summary.get("nodes", 0))


def expected_successes(alloc_or_p, inst: DesignInstance, z=None) -> np.ndarray:
    """Expected respondents per group: phase-1 plus selected-region phase-2 yield."""
    if isinstance(alloc_or_p, Allocation):
        p, z = alloc_or_p.p, alloc_or_p.z
    else:
        p = np.asarray(alloc_or_p, dtype=float)
        z = np.zeros(inst.n_regions) if z is None else np.asarray(z, dtype=float)
    phase1 = p * inst.group_sizes * (1.0 - inst.f1)
    phase2 = inst.phase2_yield() @ np.asarray(z, dtype=float) if inst.n_regions else 0.0
    return phase1 + phase2


def evaluate_cost(alloc_or_p, inst: DesignInstance, z=None) -> float:
    if isinstance(alloc_or_p, Allocation):
        p, z = alloc_or_p.p, alloc_or_p.z
    else:
        p = np.asarray(alloc_or_p, dtype=float)
        z = np.zeros(inst.n_regions) if z is None else z
    return float(inst.c1 * np.dot(p, inst.group_sizes) + inst.c2 * np.sum(z))


def make_allocation(inst: DesignInstance, p, z, method: str, optimal: bool = True, nodes: int = 0) -> Allocation:
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    z = np.asarray(z, dtype=np.int8)
    return Allocation(
        p=p,
        z=z,
        method=method,
        n=expected_successes(p, inst, z),
        cost=evaluate_cost(p, inst, z),
        contacts=p * inst.group_sizes,
        group_labels=inst.counts.group_labels,
        region_labels=inst.counts.region_labels,
        optimal=optimal,
        nodes=nodes,
    )


def standard_allocation(inst: DesignInstance, rate: float) -> Allocation:
    """Proportional stratified sampling: contact the same fraction of every group."""
    if not 0 < rate <= 1:
        raise ValueError("rate must lie in (0, 1]")
    return make_allocation(inst, np.full(inst.n_groups, rate), np.zeros(inst.n_regions), "standard")


def heuristic_allocation(inst: DesignInstance, rate: float) -> Allocation:
    """Equal contacts per group: ``rate * N / G`` each, capped at the group size."""
    if not 0 < rate <= 1:
        raise ValueError("rate must lie in (0, 1]")
    sizes = inst.group_sizes
    share = rate * sizes.sum() / inst.n_groups
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(sizes > 0, np.minimum(1.0, share / sizes), 0.0)
    return make_allocation(inst, p, np.zeros(inst.n_regions), "heuristic")


def _phase1_fractions(inst: DesignInstance, deficit: np.ndarray) -> np.ndarray:
    cap = inst.phase1_capacity()
    deficit = np.maximum(deficit, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(deficit > 0, deficit / cap, 0.0)


def _shortfall_message(labels, excess) -> str:
    return ", ".join(f"{labels[i]} short by {excess[i]:.6g}" for i in np.flatnonzero(excess > _FEAS_TOL))


def optimize_phase1(inst: DesignInstance) -> Allocation:
    """Cheapest phase-1-only design: ``p_i = req_i / (N_i (1 - F1_i))``."""
    cap = inst.phase1_capacity()
    excess = inst.req - cap
    if np.any(excess > _FEAS_TOL * np.maximum(1.0, inst.req)):
        labels = inst.counts.group_labels
        raise InfeasibleDesignError(
            "phase-1-only design infeasible: " + _shortfall_message(labels, excess),
            shortfall={labels[i]: float(excess[i]) for i in np.flatnonzero(excess > 0)},
            max_successes=dict(zip(labels, map(float, cap))),
        )
    return make_allocation(inst, _phase1_fractions(inst, inst.req), np.zeros(inst.n_regions), "phase1")


class _TwoPhaseProblem:
    """Cost of a region set S: c2 |S| + sum_i w_i max(0, req_i - cover_i(S))."""

    def __init__(self, inst: DesignInstance):
        self.inst = inst
        self.cover = inst.phase2_yield()
        self.w = inst.c1 / (1.0 - inst.f1)
        self.cap = inst.phase1_capacity()
        self.req = inst.req.copy()
        self.c2 = inst.c2
        self.tol = _FEAS_TOL * np.maximum(1.0, self.req)

    def max_successes(self) -> np.ndarray:
        return self.cap + self.cover.sum(axis=1)

    def feasible(self, deficit: np.ndarray) -> bool:
        return bool(np.all(np.maximum(deficit, 0.0) <= self.cap + self.tol))

    def cost(self, n_selected: int, deficit: np.ndarray) -> float:
        return self.c2 * n_selected + float(np.dot(self.w, np.maximum(deficit, 0.0)))

    def check_feasible(self):
        best = self.max_successes()
        short = self.req - best
        if np.any(short > self.tol):
            labels = self.inst.counts.group_labels
            raise InfeasibleDesignError(
                "two-phase design infeasible: " + _shortfall_message(labels, short),
                shortfall={labels[i]: float(short[i]) for i in np.flatnonzero(short > 0)},
                max_successes=dict(zip(labels, map(float, best))),
            )

    def allocation(self, z: np.ndarray, method: str, optimal: bool, nodes: int = 0) -> Allocation:
        deficit = self.req - self.cover @ z
        p = _phase1_fractions(self.inst, deficit)
        return make_allocation(self.inst, p, z, method, optimal=optimal, nodes=nodes)


def _greedy_incumbent(prob: _TwoPhaseProblem, candidates: np.ndarray) -> tuple[float, np.ndarray]:
    R = prob.cover.shape[1]
    z = np.zeros(R)
    deficit = prob.req.copy()
    pool = list(candidates)
    # restore feasibility first, then add regions while they pay for themselves
    while not prob.feasible(deficit) and pool:
        excess = np.maximum(np.maximum(deficit, 0.0) - prob.cap, 0.0)
        gain = np.minimum(prob.cover[:, pool], excess[:, None]).sum(axis=0)
        k = int(np.argmax(gain))
        r = pool.pop(k)
        z[r] = 1
        deficit = deficit - prob.cover[:, r]
    while pool:
        d = np.maximum(deficit, 0.0)
        gain = prob.w @ np.minimum(prob.cover[:, pool], d[:, None]) - prob.c2
        k = int(np.argmax(gain))
        if gain[k] <= 0:
            break
        r = pool.pop(k)
        z[r] = 1
        deficit = deficit - prob.cover[:, r]
    if not prob.feasible(deficit):
        return np.inf, z
    return prob.cost(int(z.sum()), deficit), z


def _relaxation(deficit: np.ndarray, cover: np.ndarray, w: np.ndarray, c2: float, cap: np.ndarray,
                n_regions: int | None = None):
    """LP relaxation of the remaining selection with fractional regions.

    Solves ``min c2 * sum(x) + w . s  s.t.  s + cover @ x >= deficit,
    0 <= x <= 1, 0 <= s <= cap`` (plus ``sum(x) = n_regions`` if given).
    Returns ``(value, x, reduced_costs)`` or ``None`` if infeasible.
    """
    G, R = cover.shape
    d = np.maximum(deficit, 0.0)
    if R == 0 or (not np.any(d > 0) and not n_regions):
        if np.any(d > cap + _FEAS_TOL * np.maximum(1.0, d)) or (n_regions or 0) > R:
            return None
        return float(np.dot(w, d)), np.zeros(R), np.full(R, c2)
    c = np.concatenate([np.full(R, c2), w])
    a_ub = -np.hstack([cover, np.eye(G)])
    bounds = [(0, 1)] * R + [(0, float(ci)) for ci in cap]
    extra = {}
    if n_regions is not None:
        extra = {"A_eq": np.concatenate([np.ones(R), np.zeros(G)])[None, :], "b_eq": [float(n_regions)]}
    res = linprog(c, A_ub=a_ub, b_ub=-d, bounds=bounds, method="highs", **extra)
    if res.status == 2:
        return None
    if res.status != 0:
        raise RuntimeError(f"LP relaxation failed: {res.message}")
    rc = res.lower.marginals[:R] + res.upper.marginals[:R]
    return float(res.fun), res.x[:R], rc


def optimize_two_phase(inst: DesignInstance, node_limit: int = DEFAULT_NODE_LIMIT) -> Allocation:
    """Exact minimum-cost two-phase design by branch and bound over regions.

    Nodes are bounded by the LP relaxation in which undecided regions may
    be selected fractionally, and branch on the most fractional region of
    that relaxation. Candidates are indexed in descending order of the
    phase-1 cost they can displace (ties: lowest index), which also breaks
    ties between equally fractional regions. When ``node_limit`` nodes
    have been expanded the incumbent is returned with ``optimal=False``.
    """
    prob = _TwoPhaseProblem(inst)
    prob.check_feasible()
    R = inst.n_regions
    if R == 0:
        alloc = optimize_phase1(inst)
        return make_allocation(inst, alloc.p, alloc.z, "two_phase")

    req_pos = np.maximum(prob.req, 0.0)
    static_value = prob.w @ np.minimum(prob.cover, req_pos[:, None])
    # regions that help no group with a positive requirement are never worth selecting
    useful = np.flatnonzero(static_value > 0)
    order = useful[np.lexsort((useful, -static_value[useful]))]
    cover = prob.cover[:, order]
    w, c2, cap = prob.w, prob.c2, prob.cap
    n_cand = len(order)

    best_cost, z0 = _greedy_incumbent(prob, order)
    best_sel = np.isin(order, np.flatnonzero(z0))

    def gap_closed(value):
        return value >= best_cost - 1e-9 * max(1.0, abs(best_cost))

    def consider(sel: np.ndarray) -> None:
        nonlocal best_cost, best_sel
        deficit = prob.req - cover[:, sel].sum(axis=1)
        if not prob.feasible(deficit):
            return
        cost = prob.cost(int(sel.sum()), deficit)
        if cost < best_cost - 1e-12 * max(1.0, abs(best_cost)):
            best_cost, best_sel = cost, sel.copy()

    def improve(sel: np.ndarray) -> np.ndarray:
        # greedy completion: add undecided regions while each pays for itself
        sel = sel.copy()
        deficit = prob.req - cover[:, sel].sum(axis=1)
        while True:
            d = np.maximum(deficit, 0.0)
            gain = w @ np.minimum(cover, d[:, None]) - c2
            gain[sel] = -np.inf
            k = int(np.argmax(gain))
            if gain[k] <= 0:
                return sel
            sel[k] = True
            deficit = deficit - cover[:, k]

    nodes = 0
    proven = True
    # node state per candidate: -1 undecided, 0 excluded, 1 selected
    stack = [np.full(n_cand, -1, dtype=np.int8)]
    while stack:
        state = stack.pop()
        nodes += 1
        if nodes > node_limit:
            proven = False
            break
        sel = state == 1
        free = np.flatnonzero(state == -1)
        deficit = prob.req - cover[:, sel].sum(axis=1)
        n_sel = int(sel.sum())
        consider(sel)
        if free.size == 0:
            continue
        if prob.feasible(deficit):
            # once feasible, a region saving no more than its cost never helps
            d = np.maximum(deficit, 0.0)
            keep = (w @ np.minimum(cover[:, free], d[:, None])) > c2
            if not np.all(keep):
                state = state.copy()
                state[free[~keep]] = 0
                free = free[keep]
                if free.size == 0:
                    continue
        relaxed = _relaxation(deficit, cover[:, free], w, c2, cap)
        if relaxed is None:
            continue
        value, x, rc = relaxed
        lb = c2 * n_sel + value
        if gap_closed(lb):
            continue
        frac = np.abs(x - 0.5)
        j = int(np.argmin(frac))
        rounded = sel.copy()
        rounded[free[x > 0.5]] = True
        if frac[j] > 0.5 - 1e-9:
            # integral relaxation: its selection is optimal for this subtree
            consider(rounded)
            continue
        consider(improve(rounded))
        if gap_closed(lb):
            continue
        # any selection uses a whole number of regions and the LP value is
        # convex in that number, so the floor/ceil of sum(x) bound the subtree
        m = float(x.sum())
        if abs(m - round(m)) > 1e-7:
            sides = [_relaxation(deficit, cover[:, free], w, c2, cap, n_regions=k)
                     for k in (int(np.floor(m)), int(np.ceil(m)))]
            vals = [c2 * n_sel + r[0] for r in sides if r is not None]
            if not vals or gap_closed(min(vals)):
                continue
            lb = max(lb, min(vals))
        # reduced-cost fixing: flipping a region raises the plain LP bound by |rc|
        lp_lb = c2 * n_sel + value
        out = (x < 0.5) & gap_closed(lp_lb + np.maximum(rc, 0.0))
        inn = (x >= 0.5) & gap_closed(lp_lb + np.maximum(-rc, 0.0))
        if np.any(out | inn):
            state = state.copy()
            state[free[out]] = 0
            state[free[inn]] = 1
            if (out | inn)[j]:
                stack.append(state)
                continue
        k = free[j]
        excl = state.copy()
        excl[k] = 0
        # without k, a region k dominates can be swapped for k at no extra cost
        excl[free[np.all(cover[:, free] <= cover[:, [k]], axis=0)]] = 0
        incl = state.copy()
        incl[k] = 1
        # the side the relaxation leans towards is explored first
        if x[j] >= 0.5:
            stack.extend((excl, incl))
        else:
            stack.extend((incl, excl))

    if not np.isfinite(best_cost):
        raise InfeasibleDesignError("no feasible region selection found within the node budget")
    best_z = np.zeros(R, dtype=np.int8)
    best_z[order[best_sel]] = 1
    return prob.allocation(best_z, "two_phase", optimal=proven, nodes=nodes)


def brute_force_two_phase(inst: DesignInstance, chunk_bits: int = 14) -> Allocation:
    """Enumerate every region selection; ties go to fewer regions, then the smallest z."""
    R = inst.n_regions
    if R > BRUTE_FORCE_MAX_REGIONS:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_REGIONS} regions, got {R}")
    prob = _TwoPhaseProblem(inst)
    if R == 0:
        alloc = optimize_phase1(inst)
        return make_allocation(inst, alloc.p, alloc.z, "brute_force")

    best = None
    # bit r of the mask is region r; enumerate in chunks to bound memory
    total = 1 << R
    step = 1 << min(R, chunk_bits)
    shifts = np.arange(R, dtype=np.int64)
    for start in range(0, total, step):
        masks = np.arange(start, min(start + step, total), dtype=np.int64)
        Z = ((masks[:, None] >> shifts[None, :]) & 1).astype(float)
        deficit = prob.req[None, :] - Z @ prob.cover.T
        d = np.maximum(deficit, 0.0)
        ok = np.all(d <= prob.cap[None, :] + prob.tol[None, :], axis=1)
        if not np.any(ok):
            continue
        nsel = Z.sum(axis=1)
        cost = prob.c2 * nsel + d @ prob.w
        cost[~ok] = np.inf
        for idx in np.flatnonzero(cost <= cost.min() * (1 + 1e-12) + 1e-12):
            key = (cost[idx], int(nsel[idx]), tuple(Z[idx].astype(int)))
            if best is None or _better(key, best):
                best = key
    if best is None:
        short = prob.req - prob.max_successes()
        labels = inst.counts.group_labels
        raise InfeasibleDesignError(
            "two-phase design infeasible for every region selection",
            shortfall={labels[i]: float(short[i]) for i in np.flatnonzero(short > 0)},
            max_successes=dict(zip(labels, map(float, prob.max_successes()))),
        )
    z = np.array(best[2], dtype=np.int8)
    return prob.allocation(z, "brute_force", optimal=True, nodes=total)


def _better(a, b) -> bool:
    ca, na, za = a
    cb, nb, zb = b
    tol = 1e-12 * max(1.0, abs(cb))
    if ca < cb - tol:
        return True
    if ca > cb + tol:
        return False
    return (na, za) < (nb, zb)
