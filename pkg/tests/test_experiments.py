import csv
import json

import numpy as np
import pytest

from cdamcmc import cli, experiments
from cdamcmc.data import GlmDataset
from cdamcmc.errors import ParameterError
from cdamcmc.experiments import (
    build_config,
    emit_adaptation_diagnostics,
    make_dataset,
    read_config_file,
    run_experiment,
    run_single,
    transform_rmse,
)

RESULTS_HEADER = (
    "experiment,sampler,replicate,seed,n,dataset_hash,status,error,n_samples,acceptance,accept_rate_adapt,"
    "ess_min,ess_median,ess_max,teff_over_t,coord0,mean0,sd0,q025_0,q975_0,acf1,acf5,acf10,acf20,acf40,"
    "final_mean_log_r,final_mean_b"
)
SUMMARY_HEADER = "experiment,sampler,replicate,coord,mean,sd,q025,q975,ess"
WALLTIME_HEADER = "experiment,sampler,replicate,adapt,burn,sample,total,sec_per_ess"
ADAPT_HEADER = "iteration,mean_log_r,mean_b,acceptance"

SMALL = ["--n", "300", "--iters", "150", "--burn", "50", "--adapt", "20", "--workers", "1"]


def header(path):
    return path.read_text().splitlines()[0]


def small_config(tmp_path, experiment="probit-reg", **kw):
    values = dict(n=300, n_iter=150, n_burn=50, n_adapt=20, workers=1, out=str(tmp_path), replicates=2)
    values.update(kw)
    return build_config(experiment, {}, values)


def test_output_headers(tmp_path):
    assert cli.main(["probit-reg", *SMALL, "--out", str(tmp_path)]) == 0
    assert header(tmp_path / "results.csv") == RESULTS_HEADER
    assert header(tmp_path / "summary.csv") == SUMMARY_HEADER
    assert header(tmp_path / "walltimes.csv") == WALLTIME_HEADER
    assert header(tmp_path / "adapt_probit_reg_cda_r0.csv") == ADAPT_HEADER
    assert header(tmp_path / "adapt_probit_reg_cda_r0_transform.csv") == "unit,eta,transformed"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["experiment"] == "probit-reg"
    assert {"numpy", "scipy", "cdamcmc"} <= set(manifest["versions"])


def test_outputs_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(small_config(a))
    run_experiment(small_config(b, workers=2))
    for name in ("results.csv", "summary.csv", "adapt_probit_reg_da_r1.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_samplers_share_dataset(tmp_path):
    results = run_experiment(small_config(tmp_path, experiment="logistic-reg", theta="-3,1"))
    by_rep = {}
    for r in results:
        by_rep.setdefault(r.replicate, set()).add(r.dataset_hash)
    assert all(len(h) == 1 for h in by_rep.values())
    assert by_rep[0] != by_rep[1]


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nn = 500\nseed = 3  # trailing\nsamplers = cda\nsubsample-frac = 0.05\n")
    values = read_config_file(cfg)
    assert values == {"n": 500, "seed": 3, "samplers": "cda", "subsample_frac": 0.05}
    config = build_config("logistic-reg", values, {"n": 700, "seed": None})
    assert config.n == 700 and config.seed == 3 and config.sampler_list == ["cda"]
    assert config.theta == "-9,1"


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    with pytest.raises(ParameterError):
        read_config_file(bad)
    bad.write_text("just words\n")
    with pytest.raises(ParameterError):
        read_config_file(bad)
    assert cli.main(["probit-reg", "--config", str(bad)]) == 2
    assert cli.main(["probit-reg", "--sampler", "gibbs"]) == 2


def test_config_validation():
    with pytest.raises(ParameterError):
        build_config("probit-reg", {}, {"n_iter": 10, "n_burn": 20})
    with pytest.raises(ParameterError):
        build_config("probit-reg", {}, {"replicates": 0})


def test_failed_replicate_is_recorded(tmp_path, monkeypatch, capsys):
    real = experiments.run_chain

    def flaky(model, config, rng, **kw):
        if config.sampler_kind == "cda":
            raise RuntimeError("diverged")
        return real(model, config, rng, **kw)

    monkeypatch.setattr(experiments, "run_chain", flaky)
    code = cli.main(["probit-reg", *SMALL, "--replicates", "1", "--out", str(tmp_path)])
    assert code == 1
    rows = list(csv.DictReader(open(tmp_path / "results.csv")))
    status = {r["sampler"]: (r["status"], r["error"]) for r in rows}
    assert status["da"][0] == "ok"
    assert status["cda"] == ("error", "RuntimeError: diverged")
    assert "FAILED" in capsys.readouterr().out


def test_scaling_grid_run_ids(tmp_path):
    config = build_config("logistic-scaling", {}, dict(n_grid="100,10000", n_iter=300, n_burn=100, n_adapt=50,
                                                       workers=1, out=str(tmp_path)))
    results = run_experiment(config)
    assert sorted(r.n for r in results) == [100, 100, 10000, 10000]
    assert (tmp_path / "adapt_logistic_scaling_cda_r0_n1e04.csv").exists()


def test_probit_intercept_fixed_calibration(tmp_path):
    config = small_config(tmp_path, experiment="probit-intercept", n=1000, n_adapt=0, replicates=1, fixed_r=50.0)
    res = run_single(config, "cda", 0)
    assert res.status == "ok"
    assert res.record["final_mean_log_r"] == pytest.approx(np.log(50.0))
    assert make_dataset(config, 0).y.sum() == 1


def test_data_file_input(tmp_path):
    gen = np.random.default_rng(0)
    X = np.column_stack([np.ones(200), gen.normal(size=200)])
    y = (gen.random(200) < 0.2).astype(float)
    path = tmp_path / "d.csv"
    GlmDataset(X, y).to_csv(path)
    config = small_config(tmp_path, experiment="logistic-reg", data=str(path), replicates=1)
    ds = make_dataset(config, 0)
    assert np.array_equal(ds.X, X) and np.array_equal(ds.y, y)


def test_adaptation_diagnostics_file(tmp_path):
    config = small_config(tmp_path, replicates=1)
    res = run_single(config, "cda", 0, keep_trace=True)
    path = emit_adaptation_diagnostics(res.trace, tmp_path / "adapt.csv")
    rows = list(csv.reader(open(path)))
    assert rows[0] == ADAPT_HEADER.split(",")
    assert len(rows) == 151
    assert float(rows[1][1]) == 0.0  # first row is the identity start
    assert (tmp_path / "adapt_transform.csv").exists()
    assert transform_rmse(res.snapshot) >= 0.0


def test_traces_written_when_requested(tmp_path):
    assert cli.main(["probit-reg", *SMALL, "--replicates", "1", "--traces", "--trace-max-coords", "2",
                     "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "trace_probit_reg_cda_r0.csv")))
    assert rows[0] == ["iter", "coord", "value"]
    assert len(rows) == 1 + 100 * 2
