import csv

import numpy as np
import pytest
import tomli

from mmriv import harness
from mmriv.errors import ConfigError, InputError, NumericalError

FAST = ("2sls", "poly2sls", "direct_krr", "mmr_rkhs")


def _cfg(tmp_path, methods=("2sls",), reps=2, **scen):
    sc = harness.ScenarioConfig(**{"kind": "low_dim", "f_star": "linear", "n": 80, **scen})
    return harness.ExperimentConfig(sc, tuple(methods), reps, 11, str(tmp_path / "out"))


def _rows_without_timing(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    col = rows[0].index("fit_time_ms")
    return [r[:col] + r[col + 1:] for r in rows]


def test_derive_seed_is_stable_and_distinct():
    assert harness.derive_seed(527, 0, 1) == harness.derive_seed(527, 0, 1)
    seeds = {harness.derive_seed(527, 0, r) for r in range(50)}
    assert len(seeds) == 50
    assert harness.derive_seed(527, 0, 0) != harness.derive_seed(527, 1, 0)


def test_config_validation():
    with pytest.raises(ConfigError):
        harness.ExperimentConfig(methods=())
    with pytest.raises(ConfigError):
        harness.ExperimentConfig(methods=("mmr_gp",))
    with pytest.raises(ConfigError):
        harness.ExperimentConfig(methods=("2sls", "2sls"))
    with pytest.raises(ConfigError):
        harness.ExperimentConfig(repetitions=0)
    with pytest.raises(ConfigError):
        harness.ExperimentConfig(method_options={"mmr_nystrom": {"rank": 3}})
    with pytest.raises(ConfigError):
        harness.ScenarioConfig(kind="mnist")
    with pytest.raises(ConfigError):
        harness.ScenarioConfig(f_star="cubic")
    with pytest.raises(ConfigError):
        harness.ExperimentConfig.from_dict({"scenario": {"kind": "low_dim", "width": 3}})
    with pytest.raises(ConfigError):
        harness.ExperimentConfig.from_dict({"plots": {}})
    assert issubclass(ConfigError, InputError)


def test_load_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(
        '[scenario]\nkind = "mendelian"\nn = 300\nd_prime = 8\n'
        '[experiment]\nmethods = ["2sls", "mmr_nystrom"]\nrepetitions = 3\n'
        "[methods.mmr_nystrom]\nm = 50\n"
    )
    cfg = harness.ExperimentConfig.load(p)
    assert cfg.scenario.d_prime == 8 and cfg.repetitions == 3 and cfg.master_seed == 527
    assert cfg.options("mmr_nystrom")["m"] == 50 and cfg.options("mmr_nystrom")["M"] == 2
    with pytest.raises(ConfigError):
        harness.ExperimentConfig.load(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("[scenario\n")
    with pytest.raises(ConfigError):
        harness.ExperimentConfig.load(tmp_path / "bad.toml")


def test_labels_round_trip():
    sc = harness.ScenarioConfig("mendelian", n=100, d_prime=32, c1=0.5)
    assert sc.label == "mendelian:d_prime=32,beta=1,c1=0.5,c2=1"
    assert harness.parse_scenario_label(sc.label) == {"kind": "mendelian", "d_prime": "32", "beta": "1", "c1": "0.5", "c2": "1"}
    assert harness.ScenarioConfig(f_star="abs").label == "low_dim:f_star=abs"


def test_single_repetition_has_zero_std(tmp_path):
    res = harness.run_benchmark(_cfg(tmp_path, reps=1), write=False)
    assert len(res.records) == 1
    assert res.summary[0]["std_mse"] == 0.0 and res.summary[0]["n_ok"] == 1


def test_2sls_linear_is_near_exact(tmp_path):
    cfg = _cfg(tmp_path, reps=3, n=2000)
    res = harness.run_benchmark(cfg, write=False)
    assert res.summary[0]["mean_mse"] < 1e-3


def test_failure_is_isolated(tmp_path, monkeypatch):
    def boom(data):
        raise NumericalError("forced")

    monkeypatch.setattr(harness.baselines, "fit_2sls", boom)
    cfg = _cfg(tmp_path, methods=("2sls", "poly2sls"), reps=2)
    res = harness.run_benchmark(cfg)
    by = {(r.method, r.status) for r in res.records}
    assert by == {("2sls", "FAILED"), ("poly2sls", "OK")}
    s = {row["method"]: row for row in res.summary}
    assert s["2sls"]["n_failed"] == 2 and np.isnan(s["2sls"]["mean_mse"])
    back = harness.read_results(tmp_path / "out" / "results.csv")
    assert [r.status for r in back] == [r.status for r in res.records]
    assert back[0].hyperparams == {"error": "forced"}


def test_record_order_and_files(tmp_path):
    cfg = _cfg(tmp_path, methods=("poly2sls", "2sls"), reps=3)
    res = harness.run_benchmark(cfg)
    assert [r.method for r in res.records] == ["poly2sls"] * 3 + ["2sls"] * 3
    out = tmp_path / "out"
    with open(out / "config.resolved.toml", "rb") as fh:
        resolved = tomli.load(fh)
    assert resolved == cfg.resolved()
    assert harness.ExperimentConfig.from_dict(resolved).resolved() == resolved
    back = harness.read_results(out / "results.csv")
    assert [r.test_mse for r in back] == [r.test_mse for r in res.records]
    assert (out / "summary.csv").read_text().splitlines()[0] == "scenario,method,n_ok,n_failed,mean_mse,std_mse,median_mse"


def test_byte_identical_reruns(tmp_path):
    a = _cfg(tmp_path / "a", methods=FAST, reps=2)
    b = _cfg(tmp_path / "b", methods=FAST, reps=2)
    harness.run_benchmark(a)
    harness.run_benchmark(b)
    assert _rows_without_timing(tmp_path / "a" / "out" / "results.csv") == _rows_without_timing(tmp_path / "b" / "out" / "results.csv")


def test_workers_do_not_change_results(tmp_path):
    one = harness.run_benchmark(_cfg(tmp_path, methods=("2sls", "poly2sls"), reps=2), write=False)
    cfg = _cfg(tmp_path, methods=("2sls", "poly2sls"), reps=2)
    two = harness.run_benchmark(harness.ExperimentConfig(**{**cfg.__dict__, "workers": 2}), write=False)
    assert [(r.method, r.seed, r.test_mse) for r in one.records] == [(r.method, r.seed, r.test_mse) for r in two.records]


def test_data_seeds_differ_between_repetitions(tmp_path):
    cfg = _cfg(tmp_path)
    a, _, _ = harness._splits(cfg, 0)
    b, _, _ = harness._splits(cfg, 1)
    assert not np.array_equal(a.x, b.x)
    tr, va, te = harness._splits(cfg, 0)
    assert abs(tr.y.mean()) < 1e-12 and abs(tr.y.std() - 1) < 1e-12


def test_mendelian_shares_parameters_across_splits(tmp_path):
    cfg = _cfg(tmp_path, kind="mendelian", d_prime=4, n=3000)
    tr, va, te = harness._splits(cfg, 0)
    # equal allele frequencies show up as matching instrument means across the three draws
    np.testing.assert_allclose(tr.z.mean(axis=0), te.z.mean(axis=0), atol=0.1)


def test_mendelian_sweep_single_value(tmp_path):
    cfg = _cfg(tmp_path, kind="mendelian", d_prime=8, n=200, reps=1)
    recs = harness.run_mendelian_sweep(cfg, "d_prime", [16])
    assert len(recs) == 1 and recs[0].scenario.startswith("mendelian:d_prime=16,")
    assert (tmp_path / "out" / "d_prime=16" / "results.csv").exists()
    assert (tmp_path / "out" / "results.csv").exists()
    with pytest.raises(ConfigError):
        harness.run_mendelian_sweep(cfg, "beta")
    with pytest.raises(ConfigError):
        harness.run_mendelian_sweep(_cfg(tmp_path), "d_prime")


def _rec(method, x, mse, status="OK"):
    return harness.BenchmarkRecord(f"mendelian:d_prime={x},beta=1,c1=1,c2=1", method, 0, 100, mse, 0, {}, status)


def test_plot_data_single_record():
    text = harness.emit_plot_data([_rec("2sls", 8, 0.5)])
    assert text.splitlines() == ["x_value,method,median,p25,p75", "8.0,2sls,0.5,0.5,0.5"]


def test_plot_data_median_and_order():
    vals = np.random.default_rng(0).uniform(size=10)
    recs = [_rec("mmr_nystrom", 32, v) for v in vals] + [_rec("2sls", 16, 1.0), _rec("2sls", 8, 2.0), _rec("2sls", 8, 9.0, "FAILED")]
    rows = list(csv.DictReader(harness.emit_plot_data(recs).splitlines()))
    assert [(r["method"], r["x_value"]) for r in rows] == [("2sls", "8.0"), ("2sls", "16.0"), ("mmr_nystrom", "32.0")]
    s = np.sort(vals)
    assert float(rows[2]["median"]) == (s[4] + s[5]) / 2
    assert float(rows[0]["median"]) == 2.0
    with pytest.raises(InputError):
        harness.emit_plot_data([])
    with pytest.raises(InputError):
        harness.emit_plot_data([_rec("2sls", 8, 0.5)], axis="c3")
