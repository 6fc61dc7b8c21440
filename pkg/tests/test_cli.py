import csv
import json
from pathlib import Path

import pytest
import yaml

from fairsurvey.cli import EXIT_ERROR, EXIT_OK, EXIT_PARTIAL, ConfigError, ExperimentConfig, main
from fairsurvey.population import load_microdata

GOLDEN = Path(__file__).parent / "golden" / "plot_schema.txt"

BASE = {
    "seed": 5,
    "trials": 20,
    "population": {
        "synthetic": {
            "groups": [
                {"label": "A", "size": 6000, "mean": 50000, "sd": 40000},
                {"label": "B", "size": 1500, "mean": 30000, "sd": 20000},
                {"label": "C", "size": 1000, "mean": 20000, "sd": 6000},
            ],
            "region_size": 500,
            "mixing": 0.5,
        }
    },
    "privacy": {"epsilons": ["inf", 0.5]},
    "design": {"rate": 0.05, "gamma_fraction": 0.2},
    "proxy": {"trials": 15},
}


def write_config(tmp_path, **overrides):
    cfg = json.loads(json.dumps(BASE))
    for key, value in overrides.items():
        section, _, name = key.partition(".")
        if name:
            cfg.setdefault(section, {})[name] = value
        else:
            cfg[section] = value
    cfg["output"] = str(tmp_path / "out")
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_generate_is_byte_identical_and_splits_prior_truth(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["generate", "-c", str(cfg), "-o", str(tmp_path / "a")]) == EXIT_OK
    assert main(["generate", "-c", str(cfg), "-o", str(tmp_path / "b")]) == EXIT_OK
    for name in ("prior.csv", "truth.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    prior = load_microdata((tmp_path / "a" / "prior.csv").read_text())
    truth = load_microdata((tmp_path / "a" / "truth.csv").read_text())
    assert list(prior.group_sizes()) == list(truth.group_sizes()) == [6000, 1500, 1000]
    assert list(prior.value[:50]) != list(truth.value[:50])


def test_run_plot_schema_matches_golden(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["run", "-c", str(cfg)]) == EXIT_OK
    rows = read_rows(tmp_path / "out" / "plot.csv")
    schema = [",".join(rows[0])] + sorted({f"{m},{metric}" for _, m, _, metric, _ in rows[1:]})
    assert schema == GOLDEN.read_text().splitlines()
    for eps in ("inf", "0.5"):
        for method in ("standard", "heuristic", "phase1", "two_phase"):
            cell = tmp_path / "out" / f"eps={eps}" / method
            for name in ("fairness.json", "fairness.csv", "trials.csv", "allocation_p.csv"):
                assert (cell / name).exists()
    assert not list((tmp_path / "out").rglob("*.tmp"))


def test_run_is_deterministic(tmp_path):
    cfg = write_config(tmp_path, **{"privacy.epsilons": [0.5]})
    outs = []
    for name in ("x", "y"):
        assert main(["run", "-c", str(cfg), "-o", str(tmp_path / name), "--methods", "standard,two_phase"]) == EXIT_OK
        outs.append((tmp_path / name / "plot.csv").read_bytes())
    assert outs[0] == outs[1]


def test_adding_a_method_keeps_other_cells(tmp_path):
    cfg = write_config(tmp_path, **{"privacy.epsilons": ["inf"]})
    main(["run", "-c", str(cfg), "-o", str(tmp_path / "one"), "--methods", "standard"])
    main(["run", "-c", str(cfg), "-o", str(tmp_path / "two"), "--methods", "heuristic,standard"])
    cell = Path("eps=inf") / "standard" / "trials.csv"
    assert (tmp_path / "one" / cell).read_bytes() == (tmp_path / "two" / cell).read_bytes()


def test_infeasible_cell_is_partial_failure(tmp_path):
    # a very tight gamma makes the optimized designs infeasible
    cfg = write_config(tmp_path, **{"design.gamma_fraction": 0.005, "privacy.epsilons": ["inf"]})
    assert main(["run", "-c", str(cfg), "--methods", "standard,two_phase"]) == EXIT_PARTIAL
    out = tmp_path / "out"
    assert (out / "eps=inf" / "two_phase" / "error.json").exists()
    assert (out / "eps=inf" / "standard" / "fairness.json").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert [c["ok"] for c in summary["cells"]] == [True, False]


def test_hard_errors(tmp_path):
    assert main(["run", "-c", str(tmp_path / "missing.yaml")]) == EXIT_ERROR
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({**BASE, "bogus": 1}))
    assert main(["run", "-c", str(bad)]) == EXIT_ERROR


def test_config_validation_and_overrides(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({**BASE, "methods": []})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({**BASE, "trials": 0})
    cfg = ExperimentConfig.from_mapping(BASE)
    assert cfg.f1 == 0.6 and cfg.f2 == 0.2 and cfg.c2 == 500 and cfg.trials == 20
    path = write_config(tmp_path)
    assert main(["run", "-c", str(path), "--trials", "3", "--methods", "standard", "--epsilons", "inf"]) == EXIT_OK
    trials = read_rows(tmp_path / "out" / "eps=inf" / "standard" / "trials.csv")
    assert len(trials) == 1 + 3 * 3


def test_step_by_step_pipeline(tmp_path):
    cfg = write_config(tmp_path)
    d = tmp_path / "out"
    assert main(["generate", "-c", str(cfg)]) == EXIT_OK
    assert main(["privatize", "--frame", str(d / "prior.csv"), "--epsilon", "1", "--out", str(d / "counts.csv")]) == EXIT_OK
    assert main(["fit-proxy", "--prior", str(d / "prior.csv"), "--counts", str(d / "counts.csv"),
                 "--trials", "15", "--out", str(d / "proxy.csv")]) == EXIT_OK
    assert main(["optimize", "--counts", str(d / "counts.csv"), "--proxy", str(d / "proxy.csv"),
                 "--prior", str(d / "prior.csv"), "--gamma-fraction", "0.2", "--out-dir", str(d / "alloc")]) == EXIT_OK
    assert main(["simulate", "--truth", str(d / "truth.csv"), "--counts", str(d / "counts.csv"),
                 "--alloc-dir", str(d / "alloc"), "--prior", str(d / "prior.csv"), "--gamma-fraction", "0.2",
                 "--trials", "10", "--out-dir", str(d / "sim")]) == EXIT_OK
    report = json.loads((d / "sim" / "fairness.json").read_text())
    assert report["method"] == "two_phase" and set(report["groups"]) == {"A", "B", "C"}


def test_ablate_and_sparsity(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["ablate", "-c", str(cfg), "--parameter", "alpha", "--grid", "0.05,0.1,0.2"]) == EXIT_OK
    rows = read_rows(tmp_path / "out" / "ablate_alpha.csv")
    costs = [float(r[2]) for r in rows[1:]]
    assert costs == sorted(costs, reverse=True)

    code = main(["sparsity", "-c", str(cfg), "--region-sizes", "8500,1000,250", "--methods", "standard",
                 "--epsilons", "0.5", "--trials", "5"])
    assert code == EXIT_OK
    rows = read_rows(tmp_path / "out" / "sparsity.csv")
    assert rows[0] == ["region_size", "epsilon", "method", "group", "variance", "aggregate_bias"]
    for group in ("A", "B", "C"):
        bias = [float(r[5]) for r in rows[1:] if r[3] == group]
        assert bias[0] < bias[1] < bias[2]
