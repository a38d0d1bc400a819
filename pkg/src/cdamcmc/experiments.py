"""Experiment orchestration: data generation, chains, summaries and output files."""

from __future__ import annotations

import csv
import json
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .binomial import HierBinomialData, HierBinomialModel, generate_hier_binomial_data
from .data import GlmDataset, generate_rare_event_data
from .diagnostics import acf, summarize
from .dist import RngStream, normal_quantile
from .errors import ParameterError
from .logistic import CollapsedLogisticModel, LogisticModel, SubsampledLogisticModel
from .mcmc import SAMPLER_KINDS, SamplerConfig, Trace, run_chain
from .poisson import PoissonData, PoissonLogNormalModel, generate_poisson_data
from .probit import ProbitModel, intercept_calibration

EXPERIMENTS = (
    "probit-intercept",
    "probit-reg",
    "logistic-reg",
    "logistic-scaling",
    "logistic-subsample",
    "hier-binomial",
    "poisson-lognormal",
)

ACF_LAGS = (1, 5, 10, 20, 40)

RESULT_COLUMNS = [
    "experiment", "sampler", "replicate", "seed", "n", "dataset_hash", "status", "error",
    "n_samples", "acceptance", "accept_rate_adapt", "ess_min", "ess_median", "ess_max", "teff_over_t",
    "coord0", "mean0", "sd0", "q025_0", "q975_0",
] + [f"acf{k}" for k in ACF_LAGS] + ["final_mean_log_r", "final_mean_b"]

SUMMARY_COLUMNS = ["experiment", "sampler", "replicate", "coord", "mean", "sd", "q025", "q975", "ess"]
WALLTIME_COLUMNS = ["experiment", "sampler", "replicate", "adapt", "burn", "sample", "total", "sec_per_ess"]
ADAPT_COLUMNS = ["iteration", "mean_log_r", "mean_b", "acceptance"]

# Settings each experiment uses unless the config file or command line
# overrides them. theta lists the intercept first.
EXPERIMENT_DEFAULTS = {
    "probit-intercept": {"n": 10_000, "sum_y": 1, "samplers": "da,cda", "n_adapt": 0, "n_burn": 500},
    "probit-reg": {"n": 10_000, "p": 3, "theta": "-5,1,-1", "covariate_mean": 0.0, "samplers": "da,cda"},
    "logistic-reg": {"n": 100_000, "p": 2, "theta": "-9,1", "covariate_mean": 1.0, "samplers": "da,cda",
                     "n_adapt": 100},
    "logistic-scaling": {"n_grid": "1e2,1e4,1e6,1e8,1e10", "sum_y": 1, "samplers": "da,cda",
                         "n_iter": 1200, "n_burn": 200, "n_adapt": 200},
    "logistic-subsample": {"n": 100_000, "p": 2, "theta": "-9,1", "covariate_mean": 1.0,
                           "samplers": "cda,subsample", "n_adapt": 100},
    "hier-binomial": {"n": 2000, "samplers": "da,cda", "n_iter": 1200, "n_burn": 200, "n_adapt": 100},
    "poisson-lognormal": {"n": 200, "p": 2, "theta": "1,0.5", "tau0": 2.0, "nu2": 0.5, "samplers": "da,cda",
                          "lam": 1e9},
}


@dataclass
class ExperimentConfig:
    experiment: str
    out: str = "results"
    n: int = 1000
    p: int = 1
    theta: str | None = None
    sum_y: float | None = None
    covariate_mean: float = 1.0
    n_grid: str | None = None
    samplers: str = "da,cda"
    replicates: int = 1
    n_iter: int = 2000
    n_burn: int = 200
    n_adapt: int = 200
    seed: int = 0
    epsilon: float = 1e-6
    lam: float = 1e9
    da_lam: float | None = None
    subsample_frac: float = 0.01
    fixed_r: float | None = None
    tau0: float = 0.0
    nu2: float = 1.0
    data: str | None = None
    traces: bool = False
    trace_max_coords: int = 10
    workers: int | None = None
    experiment_id: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ParameterError(f"unknown experiment {self.experiment!r}")
        if self.n < 1 or self.replicates < 1:
            raise ParameterError("need n >= 1 and replicates >= 1")
        for s in self.sampler_list:
            if s not in SAMPLER_KINDS + ("subsample",):
                raise ParameterError(f"unknown sampler {s!r}")
        SamplerConfig(self.n_iter, self.n_burn, self.n_adapt, self.seed, "cda", self.lam,
                      self.subsample_frac, self.epsilon)
        if self.experiment_id is None:
            self.experiment_id = self.experiment.replace("-", "_")

    @property
    def sampler_list(self) -> list[str]:
        return [s.strip() for s in self.samplers.split(",") if s.strip()]

    @property
    def theta_vector(self):
        return None if self.theta is None else np.array([float(v) for v in self.theta.split(",")])

    @property
    def grid(self) -> list[float]:
        if self.n_grid is None:
            return [float(self.n)]
        return [float(v) for v in self.n_grid.split(",")]

    def sampler_config(self, kind: str) -> SamplerConfig:
        return SamplerConfig(self.n_iter, self.n_burn, self.n_adapt, self.seed,
                             "cda" if kind == "subsample" else kind, self.lam, self.subsample_frac, self.epsilon)


CONFIG_KEYS = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, value: str):
    kind = str(CONFIG_KEYS[key])
    if value.lower() in ("none", ""):
        return None
    if "bool" in kind:
        return value.lower() in ("1", "true", "yes", "on")
    if kind.startswith("int"):
        return int(float(value))
    if kind.startswith("float"):
        return float(value)
    return value


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, keys use underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def build_config(experiment: str, file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Experiment defaults, then the config file, then command-line values."""
    values = dict(EXPERIMENT_DEFAULTS[experiment])
    values.update(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    values["experiment"] = experiment
    for k, v in list(values.items()):
        if isinstance(v, str) and k in CONFIG_KEYS and k not in ("experiment", "samplers", "theta", "n_grid",
                                                                  "out", "data", "experiment_id"):
            values[k] = _coerce(k, v)
    return ExperimentConfig(**values)


def replicate_stream(config: ExperimentConfig, replicate: int) -> RngStream:
    return RngStream(config.seed, stream_id=replicate)


def make_dataset(config: ExperimentConfig, replicate: int, n: float | None = None):
    """Dataset for one replicate. Every sampler of a replicate calls this
    with the same arguments, so they all see the same data."""
    gen = replicate_stream(config, replicate).substream(0).generator
    exp = config.experiment
    if config.data is not None and exp != "logistic-scaling":
        family = {"poisson-lognormal": "poisson", "hier-binomial": "binomial"}.get(exp, "logistic")
        return GlmDataset.from_csv(config.data, family)
    if exp == "logistic-scaling":
        n_val = int(n if n is not None else config.n)
        s = int(config.sum_y if config.sum_y is not None else 1)
        # collapsed model needs only (n, sum y); X is a single intercept entry
        return GlmDataset(np.ones((1, 1)), np.array([float(s)]), np.array([float(n_val)]), "logistic")
    if exp == "probit-intercept":
        ds, _ = generate_rare_event_data("probit", config.n, 1, gen, exact_sum_y=int(config.sum_y or 1))
        return ds
    if exp in ("probit-reg", "logistic-reg", "logistic-subsample"):
        family = "probit" if exp == "probit-reg" else "logistic"
        theta = config.theta_vector
        p = config.p if theta is None else theta.size
        ds, _ = generate_rare_event_data(family, config.n, p, gen, theta_true=None if config.sum_y else theta,
                                         target_sum_y=config.sum_y, covariate_mean=config.covariate_mean)
        return ds
    if exp == "hier-binomial":
        hb, _ = generate_hier_binomial_data(config.n, gen)
        return GlmDataset(np.ones((hb.n, 1)), hb.y, hb.N, "binomial")
    pdata, _, _ = generate_poisson_data(config.n, config.p, gen, beta=config.theta_vector,
                                        tau0=config.tau0, nu2=config.nu2)
    return GlmDataset(pdata.X, pdata.y, None, "poisson")


def make_model(config: ExperimentConfig, sampler: str, ds: GlmDataset):
    """Model object and optional fixed starting calibration for one run."""
    exp = config.experiment
    if exp == "probit-intercept":
        model = ProbitModel(ds.binary(), shared_calibration=True)
        if sampler == "da":
            return model, None
        s, n = ds.y.sum(), ds.n
        anchor = float(normal_quantile(max(s, 0.5) / n))
        if config.fixed_r is not None or config.n_adapt == 0:
            calib = intercept_calibration(n, anchor, config.fixed_r)
            return model, calib.freeze() if config.n_adapt == 0 else calib
        return model, None
    if exp == "probit-reg":
        return ProbitModel(ds.binary()), None
    if exp in ("logistic-reg", "logistic-subsample"):
        if sampler == "subsample":
            return SubsampledLogisticModel(ds.binary(), config.subsample_frac, config.epsilon), None
        return LogisticModel(ds.binary(), config.epsilon), None
    if exp == "logistic-scaling":
        return CollapsedLogisticModel(float(ds.N[0]), float(ds.y[0]), config.epsilon), None
    if exp == "hier-binomial":
        return HierBinomialModel(HierBinomialData(ds.y, ds.N), config.epsilon), None
    lam = config.da_lam if (sampler == "da" and config.da_lam is not None) else config.lam
    return PoissonLogNormalModel(PoissonData(ds.X, ds.y), lam=lam, epsilon=config.epsilon), None


@dataclass
class RunResult:
    experiment: str
    sampler: str
    replicate: int
    seed: int
    n: float
    dataset_hash: str
    status: str = "ok"
    error: str = ""
    record: dict = field(default_factory=dict)
    summary_rows: list = field(default_factory=list)
    walltimes: dict = field(default_factory=dict)
    adapt_rows: list = field(default_factory=list)
    trace: Trace | None = None
    snapshot: dict | None = None


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def result_record(res: RunResult, trace: Trace) -> dict:
    summ = summarize(trace)
    x = trace.theta_samples[:, 0]
    max_lag = min(max(ACF_LAGS), x.size - 1)
    try:
        rho = acf(x, max_lag)
        acfs = [rho[k] if k <= max_lag else float("nan") for k in ACF_LAGS]
    except ParameterError:
        acfs = [float("nan")] * len(ACF_LAGS)
    return {
        "n_samples": summ.n_samples,
        "acceptance": trace.accept_rate_frozen,
        "accept_rate_adapt": trace.accept_rate_adapt,
        "ess_min": summ.ess_min,
        "ess_median": summ.ess_median,
        "ess_max": summ.ess_max,
        "teff_over_t": summ.teff_over_t,
        "coord0": summ.coord_names[0],
        "mean0": summ.mean[0],
        "sd0": summ.sd[0],
        "q025_0": summ.q025[0],
        "q975_0": summ.q975[0],
        **{f"acf{k}": v for k, v in zip(ACF_LAGS, acfs)},
        "final_mean_log_r": trace.adapt_mean_log_r[-1],
        "final_mean_b": trace.adapt_mean_b[-1],
    }, summ


def run_single(config: ExperimentConfig, sampler: str, replicate: int, n: float | None = None,
               keep_trace: bool = False) -> RunResult:
    """One (sampler, replicate[, n]) chain. Failures are captured, not raised."""
    ds = make_dataset(config, replicate, n)
    n_val = float(ds.N[0]) if config.experiment == "logistic-scaling" else float(ds.n)
    res = RunResult(config.experiment_id, sampler, replicate, config.seed, n_val, ds.digest())
    try:
        model, init_calib = make_model(config, sampler, ds)
        chain_stream = replicate_stream(config, replicate).substream(1)
        trace = run_chain(model, config.sampler_config(sampler), chain_stream, init_calib=init_calib)
    except Exception as exc:  # recorded per replicate; the run continues
        res.status, res.error = "error", f"{type(exc).__name__}: {exc}"
        return res
    res.record, summ = result_record(res, trace)
    res.summary_rows = [
        [config.experiment_id, sampler, replicate, name, summ.mean[j], summ.sd[j], summ.q025[j], summ.q975[j],
         summ.ess[j]]
        for j, name in enumerate(summ.coord_names)
    ]
    wt = trace.wall_times
    res.walltimes = {**wt, "total": trace.wall_time, "sec_per_ess": summ.sec_per_ess}
    res.adapt_rows = adaptation_rows(trace)
    res.snapshot = trace.snapshot
    if keep_trace or config.traces:
        res.trace = trace
    return res


def adaptation_rows(trace: Trace) -> list:
    return [[t, trace.adapt_mean_log_r[t], trace.adapt_mean_b[t], trace.adapt_accept[t]]
            for t in range(trace.adapt_mean_log_r.size)]


def emit_adaptation_diagnostics(trace: Trace, path) -> Path:
    """Per-iteration (iteration, mean log r, mean b, acceptance). When the
    trace carries a probit snapshot, a second file ``<stem>_transform.csv``
    pairs eta_i with (eta_i + b_i)/sqrt(r_i) at the freeze point."""
    path = Path(path)
    _write_csv(path, ADAPT_COLUMNS, adaptation_rows(trace))
    snap = trace.snapshot
    if snap and "transformed" in snap:
        eta = np.broadcast_to(snap["eta"], np.shape(snap["transformed"]))
        rows = [[i, e, t] for i, (e, t) in enumerate(zip(eta, snap["transformed"]))]
        _write_csv(path.with_name(path.stem + "_transform.csv"), ["unit", "eta", "transformed"], rows)
    return path


def transform_rmse(snapshot: dict) -> float:
    """RMSE between eta and its calibrated transform (eta + b)/sqrt(r)."""
    eta = np.asarray(snapshot["eta"], dtype=float)
    return float(np.sqrt(np.mean((eta - np.asarray(snapshot["transformed"])) ** 2)))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _tasks(config: ExperimentConfig):
    grid = config.grid if config.experiment == "logistic-scaling" else [None]
    return [(config, s, rep, n) for n in grid for rep in range(config.replicates) for s in config.sampler_list]


def _run_task(args) -> RunResult:
    config, sampler, rep, n = args
    return run_single(config, sampler, rep, n)


def _versions() -> dict:
    import numba
    import scipy

    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "cdamcmc": __version__}


def run_experiment(config: ExperimentConfig) -> list[RunResult]:
    """Run every (sampler, replicate[, n]) task, then write results.csv,
    summary, wall times, adaptation traces, optional chain traces and the
    manifest into ``config.out``."""
    tasks = _tasks(config)
    workers = config.workers or os.cpu_count() or 1
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    check_shared_datasets(results)
    write_outputs(config, results)
    return results


def check_shared_datasets(results: list[RunResult]) -> None:
    seen: dict = {}
    for r in results:
        key = (r.replicate, r.n)
        if seen.setdefault(key, r.dataset_hash) != r.dataset_hash:
            raise RuntimeError(f"samplers saw different datasets in replicate {r.replicate}")


def _run_id(config: ExperimentConfig, r: RunResult) -> str:
    suffix = f"_n{r.n:.0e}".replace("+", "") if config.experiment == "logistic-scaling" else ""
    return f"{config.experiment_id}_{r.sampler}_r{r.replicate}{suffix}"


def write_outputs(config: ExperimentConfig, results: list[RunResult]) -> None:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, summary, walls = [], [], []
    for r in results:
        base = {"experiment": r.experiment, "sampler": r.sampler, "replicate": r.replicate, "seed": r.seed,
                "n": r.n, "dataset_hash": r.dataset_hash, "status": r.status, "error": r.error}
        rec = {**base, **r.record}
        rows.append([rec.get(c, "") for c in RESULT_COLUMNS])
        summary.extend(r.summary_rows)
        if r.status != "ok":
            continue
        walls.append([r.experiment, r.sampler, r.replicate] + [r.walltimes[k] for k in WALLTIME_COLUMNS[3:]])
        run_id = _run_id(config, r)
        _write_csv(out / f"adapt_{run_id}.csv", ADAPT_COLUMNS, r.adapt_rows)
        if r.snapshot and "transformed" in r.snapshot:
            eta = np.broadcast_to(r.snapshot["eta"], np.shape(r.snapshot["transformed"]))
            _write_csv(out / f"adapt_{run_id}_transform.csv", ["unit", "eta", "transformed"],
                       [[i, e, t] for i, (e, t) in enumerate(zip(eta, r.snapshot["transformed"]))])
        if r.trace is not None:
            th = r.trace.theta_samples[:, : config.trace_max_coords]
            names = r.trace.coord_names[: config.trace_max_coords]
            _write_csv(out / f"trace_{run_id}.csv", ["iter", "coord", "value"],
                       [[t, names[j], th[t, j]] for t in range(th.shape[0]) for j in range(th.shape[1])])
    _write_csv(out / "results.csv", RESULT_COLUMNS, rows)
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    _write_csv(out / "walltimes.csv", WALLTIME_COLUMNS, walls)
    manifest = {
        "experiment_id": config.experiment_id,
        "config": asdict(config),
        "config_keys": {k: str(t) for k, t in CONFIG_KEYS.items()},
        "versions": _versions(),
        "records": [{"sampler": r.sampler, "replicate": r.replicate, "n": r.n, "status": r.status,
                     "dataset_hash": r.dataset_hash, "error": r.error} for r in results],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
