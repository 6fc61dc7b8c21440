"""Command-line pipeline: generate, privatize, fit-proxy, optimize, simulate, run, ablate, sparsity.

Exit codes: 0 success, 2 partial (some cells infeasible), 1 hard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from . import allocator as alloc_mod
from .allocator import (
    Allocation,
    DesignInstance,
    InfeasibleDesignError,
    heuristic_allocation,
    optimize_phase1,
    optimize_two_phase,
    read_allocation,
    standard_allocation,
)
from .metrics import fairness_report
from .population import (
    CountMatrix,
    GroupSpec,
    PopulationFrame,
    SyntheticSpec,
    count_matrix,
    generate_synthetic,
    group_stats,
    load_microdata,
    repartition,
    save_microdata,
)
from .privacy import NO_PRIVACY, PrivacyParams, aggregate_bias, format_epsilon, parse_epsilon, privatize_counts
from .proxy import DEFAULT_RATES, DEFAULT_TRIALS, ProxyCurve, fit_inverse_curve, measure_variance, read_curves, required_samples, write_curves
from .simulator import replicate

log = logging.getLogger("fairsurvey")

METHODS = ("standard", "heuristic", "phase1", "two_phase")
ABLATION_PARAMETERS = ("F1", "F2", "c2", "alpha", "gamma")
PLOT_COLUMNS = ("epsilon", "method", "group", "metric", "value")
EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Experiment settings; see README for the YAML layout."""

    prior: str | None = None
    truth: str | None = None
    synthetic: dict | None = None
    epsilons: list = field(default_factory=lambda: [NO_PRIVACY])
    sensitivity: float = 1.0
    alpha: float = 0.1
    gamma_fraction: float = 0.1
    f1: float = alloc_mod.DEFAULT_F1
    f2: float = alloc_mod.DEFAULT_F2
    c1: float = alloc_mod.DEFAULT_C1
    c2: float = alloc_mod.DEFAULT_C2
    g: float = alloc_mod.DEFAULT_G
    rate: float = 0.01
    node_limit: int = alloc_mod.DEFAULT_NODE_LIMIT
    proxy_rates: list = field(default_factory=lambda: list(DEFAULT_RATES))
    proxy_trials: int = DEFAULT_TRIALS
    methods: list = field(default_factory=lambda: list(METHODS))
    trials: int = 1000
    relative_variance: bool = True
    seed: int = 0
    output: str = "out"

    def __post_init__(self):
        self.epsilons = [parse_epsilon(e) for e in self.epsilons]
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method(s): {', '.join(unknown)}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if (self.prior is None) != (self.truth is None):
            raise ConfigError("give both prior and truth paths, or neither")
        if self.prior is None and self.synthetic is None:
            raise ConfigError("need prior/truth paths or a synthetic section")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.gamma_fraction > 0:
            raise ConfigError("gamma_fraction must be positive")

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        """Flatten the sectioned YAML layout into config fields."""
        data = dict(data or {})
        flat: dict = {}
        pop = data.pop("population", {}) or {}
        flat.update({k: pop[k] for k in ("prior", "truth", "synthetic") if k in pop})
        priv = data.pop("privacy", {}) or {}
        if "epsilons" in priv:
            flat["epsilons"] = priv["epsilons"]
        if "sensitivity" in priv:
            flat["sensitivity"] = priv["sensitivity"]
        flat.update(data.pop("design", {}) or {})
        proxy = data.pop("proxy", {}) or {}
        if "rates" in proxy:
            flat["proxy_rates"] = proxy["rates"]
        if "trials" in proxy:
            flat["proxy_trials"] = proxy["trials"]
        flat.update(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**flat)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(yaml.safe_load(fh))

    def synthetic_spec(self) -> SyntheticSpec:
        if self.synthetic is None:
            raise ConfigError("config has no synthetic section")
        syn = dict(self.synthetic)
        groups = tuple(
            GroupSpec(int(g["size"]), float(g["mean"]), float(g["sd"]), g.get("label"))
            for g in syn.pop("groups")
        )
        return SyntheticSpec(
            groups,
            n_regions=syn.get("n_regions"),
            region_size=syn.get("region_size"),
            mixing=float(syn.get("mixing", 1.0)),
            seed=int(syn.get("seed", self.seed)),
        )


# ---------------------------------------------------------------- helpers


def stream_key(*parts) -> list[int]:
    """Stable integer key for a named rng stream (independent of cell order)."""
    return [zlib.crc32(str(p).encode("utf-8")) for p in parts]


def seed_for(seed: int, *parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, *stream_key(*parts)])


def atomic_write(path: str | os.PathLike, write: Callable[[io.TextIOBase], None]) -> Path:
    """Write through a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_frame(path: str | os.PathLike) -> PopulationFrame:
    with open(path, "rb") as fh:
        return load_microdata(fh)


def write_counts(m: CountMatrix, dest) -> None:
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(("group_id", "region_id", "count", "noised", "epsilon"))
    eps = "" if m.epsilon is None else format_epsilon(m.epsilon)
    for i, g in enumerate(m.group_labels):
        for j, r in enumerate(m.region_labels):
            w.writerow((g, r, repr(float(m.counts[i, j])), int(m.noised), eps))


def read_counts(src) -> CountMatrix:
    rows = list(csv.DictReader(src))
    if not rows:
        raise ValueError("count file is empty")
    groups = list(dict.fromkeys(r["group_id"] for r in rows))
    regions = list(dict.fromkeys(r["region_id"] for r in rows))
    gi = {g: i for i, g in enumerate(groups)}
    ri = {r: j for j, r in enumerate(regions)}
    counts = np.zeros((len(groups), len(regions)))
    for r in rows:
        counts[gi[r["group_id"]], ri[r["region_id"]]] = float(r["count"])
    noised = bool(int(rows[0]["noised"]))
    eps = parse_epsilon(rows[0]["epsilon"]) if rows[0]["epsilon"] else None
    return CountMatrix(counts, groups, regions, noised=noised, epsilon=eps)


def fit_proxies(prior: PopulationFrame, counts: CountMatrix, rates, trials: int,
                seed: np.random.SeedSequence) -> dict[str, ProxyCurve]:
    """One curve per group; rates are expressed against the designer-visible group size."""
    totals = dict(zip(counts.group_labels, counts.group_totals()))
    curves = {}
    for g, ss in zip(prior.group_labels, seed.spawn(prior.n_groups)):
        pts = measure_variance(prior, g, rates, trials, np.random.default_rng(ss), n_group=totals[g])
        curves[g] = fit_inverse_curve(pts, group=g)
    return curves


def gammas(prior: PopulationFrame, fraction: float) -> np.ndarray:
    stats = group_stats(prior)
    return np.array([fraction * stats[g].mean for g in prior.group_labels])


def requirements(curves: dict[str, ProxyCurve], counts: CountMatrix, alpha: float, gamma: np.ndarray) -> np.ndarray:
    totals = counts.group_totals()
    return np.array([
        required_samples(curves[g], totals[i], alpha, gamma[i]) for i, g in enumerate(counts.group_labels)
    ])


def build_instance(cfg: ExperimentConfig, counts: CountMatrix, req) -> DesignInstance:
    return DesignInstance.build(counts, req, f1=cfg.f1, f2=cfg.f2, c1=cfg.c1, c2=cfg.c2, g=cfg.g)


def allocate(method: str, inst: DesignInstance, cfg: ExperimentConfig) -> Allocation:
    if method == "standard":
        return standard_allocation(inst, cfg.rate)
    if method == "heuristic":
        return heuristic_allocation(inst, cfg.rate)
    if method == "phase1":
        return optimize_phase1(inst)
    if method == "two_phase":
        return optimize_two_phase(inst, node_limit=cfg.node_limit)
    raise ConfigError(f"unknown method {method!r}")


def populations(cfg: ExperimentConfig) -> tuple[PopulationFrame, PopulationFrame]:
    if cfg.prior is not None:
        return read_frame(cfg.prior), read_frame(cfg.truth)
    spec = cfg.synthetic_spec()
    # prior and truth are independent draws from one recipe
    prior_seed, truth_seed = (int(s.generate_state(1)[0]) for s in seed_for(spec.seed, "population").spawn(2))
    return generate_synthetic(spec, seed=prior_seed), generate_synthetic(spec, seed=truth_seed)


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: ExperimentConfig) -> list[Path]:
    prior, truth = populations(cfg)
    out = Path(cfg.output)
    return [
        atomic_write(out / "prior.csv", lambda fh: save_microdata(prior, fh)),
        atomic_write(out / "truth.csv", lambda fh: save_microdata(truth, fh)),
    ]


@dataclass
class CellResult:
    epsilon: object
    method: str
    allocation: Allocation | None = None
    report: object = None
    fairness: object = None
    error: str | None = None


def _plot_rows(cell: CellResult, gamma_rel: np.ndarray) -> list[tuple]:
    eps = format_epsilon(cell.epsilon)
    rows = []
    if cell.error is not None:
        return [(eps, cell.method, "ALL", "infeasible", 1)]
    rep, fr = cell.report, cell.fairness
    rel = rep.relative_errors()
    for i, g in enumerate(rep.group_labels):
        col = rel[:, i]
        col = col[~np.isnan(col)]
        values = {
            "variance": fr.variance[i],
            "violation_rate": fr.violation_rate[i],
            "gamma_relative": gamma_rel[i],
            "contacts": cell.allocation.contacts[i],
            "expected_successes": cell.allocation.n[i],
            "mean_successes": rep.successes[:, i].mean(),
            "undefined_rate": np.mean(rep.successes[:, i] == 0),
        }
        if col.size:
            for q in (5, 25, 50, 75, 95):
                values[f"relative_error_p{q:02d}"] = np.percentile(col, q)
            values["relative_error_mean"] = col.mean()
        rows.extend((eps, cell.method, g, k, repr(float(v))) for k, v in values.items())
    rows.append((eps, cell.method, "ALL", "xi_var", repr(float(fr.xi))))
    rows.append((eps, cell.method, "ALL", "cost", repr(float(fr.cost))))
    if fr.relative_cost is not None:
        rows.append((eps, cell.method, "ALL", "relative_cost_pct", repr(float(fr.relative_cost))))
    return rows


def run_cells(cfg: ExperimentConfig, prior: PopulationFrame, truth: PopulationFrame,
              out: Path) -> tuple[list[CellResult], list[tuple]]:
    """Every (epsilon, method) cell; failures are recorded per cell."""
    exact = count_matrix(prior)
    gamma = gammas(prior, cfg.gamma_fraction)
    truth_stats = group_stats(truth)
    gamma_rel = gamma / np.array([truth_stats[g].mean for g in truth.group_labels])
    cells: list[CellResult] = []
    plot: list[tuple] = []
    for eps in cfg.epsilons:
        eps_name = format_epsilon(eps)
        params = PrivacyParams(eps, cfg.sensitivity, int(seed_for(cfg.seed, "privacy", eps_name).generate_state(1)[0]))
        noised = privatize_counts(exact, params)
        atomic_write(out / f"eps={eps_name}" / "counts.csv", lambda fh: write_counts(noised, fh))
        curves = None
        needs_proxy = any(m in ("phase1", "two_phase") for m in cfg.methods)
        if needs_proxy:
            curves = fit_proxies(prior, noised, cfg.proxy_rates, cfg.proxy_trials, seed_for(cfg.seed, "proxy", eps_name))
            atomic_write(out / f"eps={eps_name}" / "proxy.csv", lambda fh: write_curves(curves.values(), fh))
            req = requirements(curves, noised, cfg.alpha, gamma)
        else:
            req = np.zeros(noised.shape[0])
        inst = build_instance(cfg, noised, req)
        baseline = None
        eps_cells = []
        for method in cfg.methods:
            cell = CellResult(eps, method)
            cell_dir = out / f"eps={eps_name}" / method
            try:
                cell.allocation = allocate(method, inst, cfg)
            except InfeasibleDesignError as exc:
                cell.error = str(exc)
                log.warning("eps=%s method=%s infeasible: %s", eps_name, method, exc)
                payload = {"error": str(exc), "shortfall": exc.shortfall, "max_successes": exc.max_successes}
                atomic_write(cell_dir / "error.json", lambda fh: json.dump(payload, fh, indent=2))
                eps_cells.append(cell)
                continue
            if method == "standard":
                baseline = cell.allocation.cost
            cell.report = replicate(truth, cell.allocation, cfg.f1, cfg.f2, cfg.trials,
                                    seed=seed_for(cfg.seed, "simulate", eps_name, method), g=cfg.g)
            eps_cells.append(cell)
        if baseline is None and "standard" not in cfg.methods:
            baseline = standard_allocation(inst, cfg.rate).cost
        for cell in eps_cells:
            cell_dir = out / f"eps={eps_name}" / cell.method
            if cell.error is None:
                a = cell.allocation
                cell.fairness = fairness_report(cell.report, gamma, cfg.alpha, a.cost, baseline,
                                                relative=cfg.relative_variance, epsilon=eps_name)
                _write_allocation(a, cell_dir)
                atomic_write(cell_dir / "trials.csv", cell.report.write_csv)
                atomic_write(cell_dir / "trials.json", cell.report.write_json)
                atomic_write(cell_dir / "fairness.json", cell.fairness.write_json)
                atomic_write(cell_dir / "fairness.csv", cell.fairness.write_csv)
            plot.extend(_plot_rows(cell, gamma_rel))
        cells.extend(eps_cells)
    return cells, plot


def _write_allocation(a: Allocation, cell_dir: Path) -> None:
    p_buf, z_buf, s_buf = io.StringIO(), io.StringIO(), io.StringIO()
    a.write(p_buf, z_buf, s_buf)
    atomic_write(cell_dir / "allocation_p.csv", lambda fh: fh.write(p_buf.getvalue()))
    atomic_write(cell_dir / "allocation_z.csv", lambda fh: fh.write(z_buf.getvalue()))
    atomic_write(cell_dir / "allocation.json", lambda fh: fh.write(s_buf.getvalue()))


def write_plot_csv(rows: Sequence[tuple], path: Path) -> Path:
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        w.writerows(rows)
    return atomic_write(path, write)


def cmd_run(cfg: ExperimentConfig) -> int:
    prior, truth = populations(cfg)
    out = Path(cfg.output)
    cells, plot = run_cells(cfg, prior, truth, out)
    write_plot_csv(plot, out / "plot.csv")
    summary = {
        "cells": [
            {"epsilon": format_epsilon(c.epsilon), "method": c.method, "ok": c.error is None,
             **({"error": c.error} if c.error else {"xi_var": c.fairness.xi, "cost": c.fairness.cost,
                                                     "all_pass": bool(np.all(c.fairness.passed))})}
            for c in cells
        ]
    }
    atomic_write(out / "summary.json", lambda fh: json.dump(summary, fh, indent=2))
    return EXIT_PARTIAL if any(c.error for c in cells) else EXIT_OK


def ablation_config(cfg: ExperimentConfig, parameter: str, value: float) -> ExperimentConfig:
    key = {"F1": "f1", "F2": "f2", "c2": "c2", "alpha": "alpha", "gamma": "gamma_fraction"}[parameter]
    return replace(cfg, **{key: value})


def cmd_ablate(cfg: ExperimentConfig, parameter: str, grid: Sequence[float]) -> tuple[int, Path]:
    """Optimal two-phase cost along ``grid`` for one parameter, on exact prior counts."""
    if parameter not in ABLATION_PARAMETERS:
        raise ConfigError(f"parameter must be one of {', '.join(ABLATION_PARAMETERS)}")
    prior, _ = populations(cfg)
    counts = count_matrix(prior)
    curves = fit_proxies(prior, counts, cfg.proxy_rates, cfg.proxy_trials, seed_for(cfg.seed, "proxy", "inf"))
    rows = []
    partial = False
    for value in grid:
        c = ablation_config(cfg, parameter, float(value))
        try:
            req = requirements(curves, counts, c.alpha, gammas(prior, c.gamma_fraction))
            a = optimize_two_phase(build_instance(c, counts, req), node_limit=c.node_limit)
            rows.append((parameter, repr(float(value)), repr(a.cost), 1, int(a.z.sum()), int(a.optimal)))
        except (InfeasibleDesignError, ValueError) as exc:
            partial = True
            log.warning("%s=%s infeasible: %s", parameter, value, exc)
            rows.append((parameter, repr(float(value)), "", 0, "", ""))

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("parameter", "value", "cost", "feasible", "n_regions", "optimal"))
        w.writerows(rows)
    path = atomic_write(Path(cfg.output) / f"ablate_{parameter}.csv", write)
    return (EXIT_PARTIAL if partial else EXIT_OK), path


def cmd_sparsity(cfg: ExperimentConfig, region_sizes: Sequence[int]) -> tuple[int, Path]:
    """Re-run the experiment with regions of each size; report variances and count bias."""
    if any(int(s) < 1 for s in region_sizes):
        raise ConfigError("region sizes must be >= 1")
    prior, truth = populations(cfg)
    rows = []
    partial = False
    for size in region_sizes:
        size = int(size)
        p, t = repartition(prior, size), repartition(truth, size)
        out = Path(cfg.output) / f"region_size={size}"
        cells, plot = run_cells(cfg, p, t, out)
        write_plot_csv(plot, out / "plot.csv")
        exact = count_matrix(p)
        for c in cells:
            params = PrivacyParams(c.epsilon, cfg.sensitivity)
            for i, g in enumerate(p.group_labels):
                bias = aggregate_bias(exact.counts[i], params)
                var = "" if c.error else repr(float(c.fairness.variance[i]))
                rows.append((size, format_epsilon(c.epsilon), c.method, g, var, repr(bias)))
            partial |= c.error is not None

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("region_size", "epsilon", "method", "group", "variance", "aggregate_bias"))
        w.writerows(rows)
    path = atomic_write(Path(cfg.output) / "sparsity.csv", write)
    return (EXIT_PARTIAL if partial else EXIT_OK), path


# ---------------------------------------------------------------- argparse


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _config_from_args(args) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    cfg = ExperimentConfig.from_mapping(data)
    overrides = {}
    for name in ("seed", "trials", "output", "rate", "node_limit", "proxy_trials"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "epsilons", None):
        overrides["epsilons"] = [parse_epsilon(e) for e in args.epsilons.split(",")]
    if getattr(args, "methods", None):
        overrides["methods"] = args.methods.split(",")
    return replace(cfg, **overrides) if overrides else cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", required=True, help="YAML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--output", "-o")
    p.add_argument("--rate", type=float, help="contact rate for standard/heuristic")
    p.add_argument("--node-limit", dest="node_limit", type=int)
    p.add_argument("--proxy-trials", dest="proxy_trials", type=int)
    p.add_argument("--epsilons", help="comma-separated, 'inf' for no privacy")
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")


def _design_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--gamma-fraction", type=float, default=0.1)
    p.add_argument("--f1", type=float, default=alloc_mod.DEFAULT_F1)
    p.add_argument("--f2", type=float, default=alloc_mod.DEFAULT_F2)
    p.add_argument("--c1", type=float, default=alloc_mod.DEFAULT_C1)
    p.add_argument("--c2", type=float, default=alloc_mod.DEFAULT_C2)
    p.add_argument("--g", type=float, default=alloc_mod.DEFAULT_G)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairsurvey", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic prior.csv and truth.csv")
    _add_common(p)

    p = sub.add_parser("privatize", help="exact or DP-noised group x region counts of a frame")
    p.add_argument("--frame", required=True)
    p.add_argument("--epsilon", default="inf")
    p.add_argument("--sensitivity", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-proxy", help="fit a/x variance proxies on prior data")
    p.add_argument("--prior", required=True)
    p.add_argument("--counts", help="designer-visible counts CSV (defaults to exact prior counts)")
    p.add_argument("--rates", type=_float_list, default=list(DEFAULT_RATES))
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("optimize", help="compute one allocation")
    p.add_argument("--counts", required=True)
    p.add_argument("--proxy", help="proxy CSV (needed by phase1/two_phase)")
    p.add_argument("--prior", help="prior frame, for gamma = fraction x group mean")
    p.add_argument("--method", choices=METHODS, default="two_phase")
    p.add_argument("--rate", type=float, default=0.01)
    p.add_argument("--node-limit", dest="node_limit", type=int, default=alloc_mod.DEFAULT_NODE_LIMIT)
    p.add_argument("--out-dir", required=True)
    _design_args(p)

    p = sub.add_parser("simulate", help="replicate surveys of a stored allocation")
    p.add_argument("--truth", required=True)
    p.add_argument("--counts", required=True, help="counts the allocation was designed on")
    p.add_argument("--alloc-dir", required=True)
    p.add_argument("--prior", help="prior frame for gamma (defaults to truth)")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--absolute", action="store_true", help="report absolute instead of relative variances")
    p.add_argument("--out-dir", required=True)
    _design_args(p)

    p = sub.add_parser("run", help="full (epsilon x method) experiment grid")
    _add_common(p)

    p = sub.add_parser("ablate", help="two-phase cost curve over one parameter")
    _add_common(p)
    p.add_argument("--parameter", required=True, choices=ABLATION_PARAMETERS)
    p.add_argument("--grid", required=True, type=_float_list)

    p = sub.add_parser("sparsity", help="repeat the experiment over region sizes")
    _add_common(p)
    p.add_argument("--region-sizes", required=True, type=lambda s: [int(x) for x in s.split(",")])
    return parser


def _design_from_args(args, counts: CountMatrix, req) -> DesignInstance:
    return DesignInstance.build(counts, req, f1=args.f1, f2=args.f2, c1=args.c1, c2=args.c2, g=args.g)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except InfeasibleDesignError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "generate":
        for path in cmd_generate(_config_from_args(args)):
            print(path)
        return EXIT_OK
    if cmd == "privatize":
        frame = read_frame(args.frame)
        exact = count_matrix(frame)
        eps = parse_epsilon(args.epsilon)
        m = privatize_counts(exact, PrivacyParams(eps, args.sensitivity, args.seed))
        print(atomic_write(args.out, lambda fh: write_counts(m, fh)))
        return EXIT_OK
    if cmd == "fit-proxy":
        prior = read_frame(args.prior)
        if args.counts:
            with open(args.counts, encoding="utf-8") as fh:
                counts = read_counts(fh)
        else:
            counts = count_matrix(prior)
        curves = fit_proxies(prior, counts, args.rates, args.trials, np.random.SeedSequence(args.seed))
        print(atomic_write(args.out, lambda fh: write_curves(curves.values(), fh)))
        return EXIT_OK
    if cmd == "optimize":
        with open(args.counts, encoding="utf-8") as fh:
            counts = read_counts(fh)
        req = np.zeros(counts.shape[0])
        if args.method in ("phase1", "two_phase"):
            if not (args.proxy and args.prior):
                raise ConfigError(f"{args.method} needs --proxy and --prior")
            with open(args.proxy, encoding="utf-8") as fh:
                curves = read_curves(fh)
            req = requirements(curves, counts, args.alpha, gammas(read_frame(args.prior), args.gamma_fraction))
        inst = _design_from_args(args, counts, req)
        cfg_like = argparse.Namespace(rate=args.rate, node_limit=args.node_limit)
        a = allocate(args.method, inst, cfg_like)
        _write_allocation(a, Path(args.out_dir))
        print(json.dumps(a.summary(), indent=2))
        return EXIT_OK
    if cmd == "simulate":
        truth = read_frame(args.truth)
        with open(args.counts, encoding="utf-8") as fh:
            counts = read_counts(fh)
        inst = _design_from_args(args, counts, np.zeros(counts.shape[0]))
        d = Path(args.alloc_dir)
        with open(d / "allocation_p.csv") as p_fh, open(d / "allocation_z.csv") as z_fh, \
                open(d / "allocation.json") as s_fh:
            a = read_allocation(p_fh, z_fh, s_fh, inst)
        rep = replicate(truth, a, args.f1, args.f2, args.trials, seed=args.seed, g=args.g)
        gamma = gammas(read_frame(args.prior) if args.prior else truth, args.gamma_fraction)
        fr = fairness_report(rep, gamma, args.alpha, a.cost, relative=not args.absolute)
        out = Path(args.out_dir)
        atomic_write(out / "trials.csv", rep.write_csv)
        atomic_write(out / "trials.json", rep.write_json)
        atomic_write(out / "fairness.json", fr.write_json)
        atomic_write(out / "fairness.csv", fr.write_csv)
        print(json.dumps(fr.to_dict(), indent=2))
        return EXIT_OK
    cfg = _config_from_args(args)
    if cmd == "run":
        return cmd_run(cfg)
    if cmd == "ablate":
        code, path = cmd_ablate(cfg, args.parameter, args.grid)
        print(path)
        return code
    if cmd == "sparsity":
        code, path = cmd_sparsity(cfg, args.region_sizes)
        print(path)
        return code
    raise ConfigError(f"unknown command {cmd}")


if __name__ == "__main__":
    sys.exit(main())
