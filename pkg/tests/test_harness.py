import csv
import json

import numpy as np
import pytest

import intmed.harness as H
from intmed.cli import main
from intmed.core import Contrast, Dataset
from intmed.dgp import DgpSpec, true_theta
from intmed.harness import (
    REPLICATION_HEADER,
    SUMMARY_HEADER,
    MetricsRow,
    ScenarioSpec,
    derive_seed,
    load_config,
    oracle_report,
    run_grid,
    verify_identities,
)

from conftest import C10

TINY = dict(sample_sizes=(100,), replications=2, estimators=("onestep", "tmle"))


def test_scenario_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(name="miss_y")
    with pytest.raises(ValueError):
        ScenarioSpec(replications=0)
    with pytest.raises(ValueError):
        ScenarioSpec(sample_sizes=(0, 100))
    with pytest.raises(ValueError):
        ScenarioSpec(estimators=("plugin",))
    q = ScenarioSpec.quick()
    assert q.sample_sizes == (200, 800) and q.replications == 50


def test_metrics_row_validation():
    with pytest.raises(ValueError):
        MetricsRow("s", "e", "indirect", 10, 0.0, 1.0, 1.2, 1.0, 0.1, 5)
    with pytest.raises(ValueError):
        MetricsRow("s", "e", "indirect", 10, 0.0, -1.0, 0.9, 1.0, 0.1, 5)


def test_seed_derivation():
    seeds = {derive_seed(0, s, n, r) for s in ("all_consistent", "miss_q") for n in (200, 800) for r in range(50)}
    assert len(seeds) == 200
    assert derive_seed(3, "miss_q", 200, 7) == derive_seed(3, "miss_q", 200, 7)
    assert 0 <= derive_seed(1, "x", 1, 1) < 2**63


def test_one_replication_row_count(tmp_path):
    spec = ScenarioSpec(name="miss_g", sample_sizes=(120,), replications=1)
    res = run_grid(spec, tmp_path)
    with open(res.paths["replications"]) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == REPLICATION_HEADER
    keys = [(r[1], r[2]) for r in rows[1:]]
    assert len(keys) == len(set(keys)) == 3 * 3
    with open(res.paths["summary"]) as fh:
        assert tuple(next(csv.reader(fh))) == SUMMARY_HEADER
    assert json.loads(res.paths["config"].read_text())["name"] == "miss_g"


def test_grid_is_deterministic_across_job_counts(tmp_path):
    specs = [ScenarioSpec(name="all_consistent", **TINY), ScenarioSpec(name="miss_q", **TINY)]
    a = run_grid(specs, tmp_path / "a", jobs=1)
    b = run_grid(specs, tmp_path / "b", jobs=2)
    for key in ("replications", "summary", "config"):
        assert a.paths[key].read_bytes() == b.paths[key].read_bytes()


def test_errors_are_recorded_and_grid_continues(tmp_path, monkeypatch):
    calls = {"n": 0}
    real = H.decompose_effects

    def flaky(data, cfg, est, *args, **kw):
        calls["n"] += 1
        if est == "tmle":
            raise FloatingPointError("boom")
        return real(data, cfg, est, *args, **kw)

    monkeypatch.setattr(H, "decompose_effects", flaky)
    res = run_grid(ScenarioSpec(name="all_consistent", **TINY), tmp_path, jobs=1)
    bad = [r for r in res.rows if r.error]
    assert len(bad) == 2 * 3 and all("FloatingPointError" in r.error for r in bad)
    assert res.n_errors == 6
    ok = [m for m in res.summary if m.estimator == "onestep"]
    assert all(m.replications == 2 for m in ok)


def test_config_roundtrip(tmp_path):
    spec = ScenarioSpec(name="miss_r", sample_sizes=(50, 60), replications=3, base_seed=9, folds=3)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(spec.to_dict()))
    assert load_config(p) == [spec]
    p.write_text(json.dumps({"name": "miss_r", "colour": 1}))
    with pytest.raises(ValueError):
        load_config(p)


def test_oracle_report(dgp):
    rep = oracle_report(C10)
    assert rep.thetas[C10][0] == pytest.approx(true_theta(dgp, C10), abs=1e-12)
    e = rep.effects
    assert e["indirect"][0] + e["direct"][0] == e["total"][0]
    assert "theta(1,0)" in rep.to_text() and rep.to_csv().startswith("quantity,value,efficiency_bound\n")


def test_oracle_report_constant_outcome():
    spec = DgpSpec(p_y=lambda m, z, a, w1, w2, w3: 0.25 + 0 * (m + z + a + w1))
    rep = oracle_report(Contrast(1, 1), spec)
    assert rep.thetas[Contrast(1, 1)][0] == pytest.approx(0.25, abs=1e-15)


def test_verify_identities_fresh():
    checks = {c.name: c for c in verify_identities()}
    failing = [name for name, c in checks.items() if not c.passed]
    # the (v, b, u) configuration carries a g-error x q-error remainder
    assert failing == ["robustness v & (b,u)"]
    assert checks["second-order terms vanish at truth"].discrepancy == 0.0
    assert all(c.discrepancy < 1e-10 for n, c in checks.items() if n not in failing and "biased" not in n)


def test_verify_identities_detects_corrupted_ratio():
    checks = {c.name: c for c in verify_identities(corrupt_c=True)}
    assert not checks["alternate EIF pointwise theta(1,0)"].passed


# -- command line -----------------------------------------------------------------------


def test_cli_simulate_and_estimate(tmp_path, capsys):
    path = tmp_path / "d.csv"
    assert main(["simulate", "--n", "200", "--seed", "5", "--out", str(path)]) == 0
    assert Dataset.from_csv(path).n == 200
    assert main(["estimate", "--data", str(path), "--estimator", "tmle", "--contrast", "1,1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["estimator"] == "tmle" and 0 <= doc["theta_hat"] <= 1
    assert main(["estimate", "--n", "300", "--effects", "--folds", "3"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["total"]["theta_hat"] == doc["indirect"]["theta_hat"] + doc["direct"]["theta_hat"]


def test_cli_grid(tmp_path, capsys):
    out = tmp_path / "g"
    code = main(["grid", "--scenario", "miss_b", "--n", "100", "--reps", "2", "--estimator", "onestep",
                 "--out", str(out), "--jobs", "1"])
    assert code == 0
    assert (out / "summary.csv").exists()
    assert "miss_b" in capsys.readouterr().out
    cfg = out / "config.json"
    assert main(["grid", "--config", str(cfg), "--out", str(tmp_path / "g2")]) == 0
    assert (tmp_path / "g2" / "replications.csv").read_bytes() == (out / "replications.csv").read_bytes()


def test_cli_grid_exit_code_on_errors(tmp_path, monkeypatch):
    monkeypatch.setattr(H, "decompose_effects", lambda *a, **k: (_ for _ in ()).throw(RuntimeError("x")))
    code = main(["grid", "--n", "100", "--reps", "1", "--out", str(tmp_path), "--jobs", "1"])
    assert code == 1


def test_cli_oracle_and_verify(tmp_path, capsys):
    assert main(["oracle", "--contrast", "1,0", "--out", str(tmp_path / "o.csv")]) == 0
    assert "theta(1,0)" in (tmp_path / "o.csv").read_text()
    assert main(["verify"]) == 1
    out = capsys.readouterr().out
    assert "17/18 identities hold" in out


def test_cli_usage_errors(capsys):
    with pytest.raises(SystemExit):
        main(["estimate", "--contrast", "x"])
    assert main(["estimate", "--n", "5"]) == 2


def test_jobs_env(monkeypatch):
    monkeypatch.setenv("INTMED_JOBS", "3")
    assert H.default_jobs() == 3
    monkeypatch.setenv("INTMED_JOBS", "zero")
    assert H.default_jobs() == 1
