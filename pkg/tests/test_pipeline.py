import json

import numpy as np
import pytest

from oeduu import counters
from oeduu.config import load_config
from oeduu.errors import NumericalError
from oeduu.pipeline import (
    compare_budgets,
    evaluate_designs,
    load_problem,
    read_designs,
    run_build_rom,
    run_evaluate,
    run_optimize,
)

from conftest import CONFIGS


@pytest.fixture(scope="module")
def smoke():
    return load_config(CONFIGS / "smoke.toml")


@pytest.fixture(scope="module")
def built(smoke, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    summary = run_build_rom(smoke, out)
    return out, summary


def test_archive_deterministic(smoke, built, tmp_path):
    out, _ = built
    run_build_rom(smoke, tmp_path)
    a = json.loads((out / "rom" / "checksums.json").read_text())
    b = json.loads((tmp_path / "rom" / "checksums.json").read_text())
    assert a == b


def test_different_seed_changes_archive(smoke, built, tmp_path):
    out, _ = built
    run_build_rom(smoke, tmp_path, seed=123)
    a = json.loads((out / "rom" / "checksums.json").read_text())
    b = json.loads((tmp_path / "rom" / "checksums.json").read_text())
    assert a["sample0_B.csv"] != b["sample0_B.csv"]


def test_seed_audit_and_tables(built):
    _, summary = built
    audit = summary["seed_audit"]
    assert audit["disjoint"]
    assert not {tuple(s) for s in audit["saa_seeds"]} & {tuple(s) for s in audit["eval_seeds"]}
    growth = {(r["mu"], r["N"]): r["k"] for r in summary["table"] if r["table"] == "growth"}
    N = max(n for _, n in growth)
    assert growth[(2e-3, N)] <= growth[(1e-4, N)]
    clusters = [r for r in summary["table"] if r["table"] == "clusters"]
    assert {r["n_clusters"] for r in clusters} == {4}


def test_optimize_is_pde_free(smoke, built, tmp_path):
    out, _ = built
    before = counters.snapshot()
    designs, extra = run_optimize(smoke, out / "rom", tmp_path)
    assert counters.snapshot() == before
    assert all(v == 0 for v in extra["pde_solves_during_optimization"].values())
    n_gamma = len(smoke.experiment.gamma_grid)
    assert len(designs) == n_gamma * (1 + smoke.experiment.n_deterministic)
    back = read_designs(tmp_path)
    for a, b in zip(designs, back):
        assert np.array_equal(a["w"], b["w"])


def test_optimize_rejects_pde_work(smoke, built, tmp_path, monkeypatch):
    import oeduu.pipeline as pl
    out, _ = built
    real = pl.optimize_designs

    def leaky(*args, **kwargs):
        counters.add("transport", 1)
        return real(*args, **kwargs)

    monkeypatch.setattr(pl, "optimize_designs", leaky)
    with pytest.raises(NumericalError):
        run_optimize(smoke, out / "rom", tmp_path)


def test_evaluation_repeatable(built):
    out, _ = built
    problem, _ = load_problem(out / "rom")
    ones = [{"mode": "oeduu", "sample": -1, "gamma": 0.0, "nnz": problem.s,
             "w": np.ones(problem.s)}]
    assert evaluate_designs(problem, ones) == evaluate_designs(problem, ones)


def test_run_evaluate_outputs(smoke, built, tmp_path):
    out, _ = built
    run_optimize(smoke, out / "rom", out)
    rows, comparison, summary = run_evaluate(smoke, out, tmp_path)
    assert summary["seed_audit"]["disjoint"]
    assert len(rows) == len(read_designs(out))
    for r in rows:
        assert r["p2"] <= r["p25"] <= r["p50"] <= r["p75"] <= r["p98"]
    rows2, _, _ = run_evaluate(smoke, out, tmp_path)
    assert rows == rows2


def test_compare_budgets_definition():
    rows = [
        {"mode": "oeduu", "nnz": 2, "mean": -5.0},
        {"mode": "oeduu", "nnz": 2, "mean": -6.0},
        {"mode": "deterministic", "nnz": 2, "mean": -4.0},
        {"mode": "deterministic", "nnz": 2, "mean": -7.0},
        {"mode": "deterministic", "nnz": 2, "mean": -5.5},
        {"mode": "oeduu", "nnz": 3, "mean": -1.0},
        {"mode": "deterministic", "nnz": 5, "mean": -9.0},
        {"mode": "oeduu", "nnz": 0, "mean": 0.0},
        {"mode": "deterministic", "nnz": 0, "mean": 0.0},
    ]
    out = compare_budgets(rows)
    assert len(out) == 1
    c = out[0]
    assert c["nnz"] == 2 and c["oeduu_mean"] == -6.0 and c["deterministic_median"] == -5.5
    assert c["advantage"] == pytest.approx(0.5) and c["oeduu_better"]
