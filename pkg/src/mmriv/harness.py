"""Experiment configuration, benchmark orchestration and result files.

Config schema (TOML)::

    [scenario]
    kind = "low_dim"          # or "mendelian"
    f_star = "sin"            # low_dim: abs | linear | sin | step
    n = 2000                  # size of each of the train/validation/test draws
    # mendelian only: d_prime = 16, beta = 1.0, c1 = 1.0, c2 = 1.0

    [experiment]
    methods = ["mmr_nystrom", "2sls"]
    repetitions = 10
    master_seed = 527
    output_dir = "results"
    workers = 1

    [methods.mmr_nystrom]     # optional per-method overrides, see METHOD_DEFAULTS
    m = 300

Seeds: repetition ``r`` uses ``derive_seed(master, 0, r)``; its train,
validation and test draws use ``derive_seed(master, 0, r, split)`` with
split 0, 1, 2, and method ``j`` (index in ``METHODS``) trains with
``derive_seed(master, 1, r, j)``.  Mendelian allele frequencies and
instrument strengths use ``derive_seed(master, 2)`` for the whole
experiment.  ``derive_seed`` hashes its arguments with
``numpy.random.SeedSequence``.

Outputs in ``output_dir``: ``results.csv``, ``summary.csv`` and
``config.resolved.toml``.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import tomli
import tomli_w

from . import baselines, datagen, kernels, nn, nystrom, rkhs, selection
from .errors import ConfigError, InputError, NumericalError
from .risk import Dataset

log = logging.getLogger(__name__)

METHODS = ("mmr_rkhs", "mmr_nystrom", "mmr_nn", "2sls", "poly2sls", "direct_krr")
RESULT_HEADER = ("scenario", "method", "seed", "n", "test_mse", "fit_time_ms", "hyperparams_json")
SWEEPS = {"d_prime": (8, 16, 32), "c1": (0.5, 1.0, 2.0), "c2": (0.5, 1.0, 2.0)}

METHOD_DEFAULTS = {
    "mmr_rkhs": {"M": 2, "lambda_grid": list(rkhs.DEFAULT_LAMBDA_GRID), "sigma_factors": list(selection.DEFAULT_SIGMA_FACTORS)},
    "mmr_nystrom": {
        "M": 2,
        "m": nystrom.DEFAULT_M,
        "draws": nystrom.DEFAULT_DRAWS,
        "lambda_grid": list(rkhs.DEFAULT_LAMBDA_GRID),
        "sigma_factors": list(selection.DEFAULT_SIGMA_FACTORS),
    },
    "mmr_nn": {
        "arch": list(nn.DEFAULT_ARCH),
        "lr_grid": list(nn.WIDE_LR_GRID),
        "lambda_grid": list(nn.PAPER_LAMBDA_GRID),
        "epochs": 1000,
        "optimizer": "momentum",
    },
    "2sls": {},
    "poly2sls": {"max_degree": baselines.DEFAULT_MAX_DEGREE, "ridge_grid": list(baselines.DEFAULT_RIDGE_GRID), "cv_folds": 5},
    "direct_krr": {"lambda_grid": list(rkhs.DEFAULT_LAMBDA_GRID), "cv_folds": 5},
}


def derive_seed(*keys: int) -> int:
    """A 32-bit seed determined by the integer ``keys``."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# configuration


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "low_dim"
    f_star: str = "sin"
    n: int = 2000
    d_prime: int = 16
    beta: float = 1.0
    c1: float = 1.0
    c2: float = 1.0

    def __post_init__(self):
        if self.kind not in ("low_dim", "mendelian"):
            raise ConfigError(f"scenario.kind must be 'low_dim' or 'mendelian', got {self.kind!r}")
        if self.n < 2:
            raise ConfigError("scenario.n must be >= 2")
        if self.kind == "low_dim" and self.f_star not in datagen.STRUCTURAL_FUNCTIONS:
            raise ConfigError(f"unknown f_star {self.f_star!r}")
        if self.kind == "mendelian" and (self.d_prime < 1 or self.c1 <= 0 or self.c2 <= 0):
            raise ConfigError("mendelian scenario needs d_prime >= 1 and positive c1, c2")

    @property
    def label(self) -> str:
        if self.kind == "low_dim":
            return f"low_dim:f_star={self.f_star}"
        return f"mendelian:d_prime={self.d_prime},beta={self.beta:g},c1={self.c1:g},c2={self.c2:g}"

    def spec(self, n: int, seed: int, param_seed: int):
        if self.kind == "low_dim":
            return datagen.LowDimSpec(self.f_star, n, seed)
        return datagen.MendelianSpec(self.d_prime, self.beta, self.c1, self.c2, n, seed, param_seed)

    def to_dict(self) -> dict:
        if self.kind == "low_dim":
            return {"kind": self.kind, "f_star": self.f_star, "n": self.n}
        return {"kind": self.kind, "n": self.n, "d_prime": self.d_prime, "beta": self.beta, "c1": self.c1, "c2": self.c2}


def parse_scenario_label(label: str) -> dict:
    """Inverse of ``ScenarioConfig.label`` as a flat dict of strings."""
    kind, _, rest = label.partition(":")
    out = {"kind": kind}
    for part in filter(None, rest.split(",")):
        k, _, v = part.partition("=")
        out[k] = v
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = ScenarioConfig()
    methods: Sequence[str] = ("mmr_nystrom",)
    repetitions: int = 10
    master_seed: int = 527
    output_dir: str = "results"
    workers: int = 1
    method_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("experiment.methods must be non-empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("experiment.methods has duplicates")
        if self.repetitions < 1:
            raise ConfigError("experiment.repetitions must be >= 1")
        if self.workers < 1:
            raise ConfigError("experiment.workers must be >= 1")
        for name, opts in self.method_options.items():
            if name not in METHODS:
                raise ConfigError(f"options given for unknown method {name!r}")
            bad = set(opts) - set(METHOD_DEFAULTS[name])
            if bad:
                raise ConfigError(f"unknown options for {name}: {sorted(bad)}")

    def options(self, method: str) -> dict:
        opts = copy.deepcopy(METHOD_DEFAULTS[method])
        opts.update(self.method_options.get(method, {}))
        return opts

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a table")
        unknown = set(d) - {"scenario", "experiment", "methods"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        try:
            scenario = ScenarioConfig(**d.get("scenario", {}))
            exp = dict(d.get("experiment", {}))
            exp["methods"] = tuple(exp.get("methods", ("mmr_nystrom",)))
            return cls(scenario=scenario, method_options=dict(d.get("methods", {})), **exp)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                return cls.from_dict(tomli.load(fh))
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def resolved(self) -> dict:
        """Every effective setting, including defaulted method options."""
        return {
            "scenario": self.scenario.to_dict(),
            "experiment": {
                "methods": list(self.methods),
                "repetitions": self.repetitions,
                "master_seed": self.master_seed,
                "output_dir": str(self.output_dir),
                "workers": self.workers,
            },
            "methods": {m: self.options(m) for m in self.methods},
        }


# records


@dataclass
class BenchmarkRecord:
    scenario: str
    method: str
    seed: int
    n: int
    test_mse: float
    fit_time_ms: int
    hyperparams: dict
    status: str = "OK"

    def row(self) -> list:
        hp = dict(self.hyperparams)
        if self.status != "OK":
            hp["status"] = self.status
        return [
            self.scenario,
            self.method,
            self.seed,
            self.n,
            repr(float(self.test_mse)),
            self.fit_time_ms,
            json.dumps(hp, sort_keys=True),
        ]


@dataclass
class BenchmarkResult:
    records: List[BenchmarkRecord]
    summary: List[dict]


def _mse(pred, f_star) -> float:
    return float(np.mean((np.asarray(pred) - f_star) ** 2))


def _mmr_select(sel: Dataset, opts: dict, seed: int, factors=None):
    kernel_k = kernels.sum_gaussians_from_median(sel.z)
    deltas = selection.delta_grid_from_lambdas(sel.n, opts["lambda_grid"])
    sigmas = selection.sigma_grid(sel.x, opts["sigma_factors"])
    plan = selection.make_plan(sel.n, opts["M"], seed)
    delta, l_spec, _ = selection.select_hyperparams(sel, kernel_k, "gaussian", deltas, sigmas, plan, factors)
    lam = 1.0 / (delta * sel.n ** 2)
    return kernel_k, l_spec, lam


def _fit_method(method: str, opts: dict, train: Dataset, val: Dataset, test: Dataset, seed: int, mendelian: bool):
    """Fit one method; returns ``(test_mse, fit_time_ms, hyperparams)``.

    Hyperparameter selection is excluded from the timing.
    """
    pooled = train if mendelian else Dataset.concat(train, val)
    if method == "mmr_rkhs":
        kernel_k, l_spec, lam = _mmr_select(pooled, opts, seed)
        t0 = time.perf_counter()
        model = rkhs.fit(pooled, kernel_k, l_spec, lam)
        ms = (time.perf_counter() - t0) * 1e3
        hp = {"lambda": lam, "sigma_l": l_spec.params[0], "jitter": model.jitter_used}
        return _mse(model.predict(test.x), test.f_star), ms, hp

    if method == "mmr_nystrom":
        m = min(int(opts["m"]), pooled.n)
        kernel_k = kernels.sum_gaussians_from_median(pooled.z)
        factors = nystrom.nystrom_factors_from_kernel(kernel_k, pooled.z, m, derive_seed(seed, 0))
        kernel_k, l_spec, lam = _mmr_select(pooled, opts, seed, factors)
        L = kernels.gram(l_spec, pooled.x)
        mses, total = [], 0.0
        for draw in range(int(opts["draws"])):
            f = nystrom.nystrom_factors_from_kernel(kernel_k, pooled.z, m, derive_seed(seed, 1, draw))
            t0 = time.perf_counter()
            model = nystrom.fit_from_factors(pooled, f, l_spec, lam, L)
            total += time.perf_counter() - t0
            mses.append(_mse(model.predict(test.x), test.f_star))
        hp = {"lambda": lam, "sigma_l": l_spec.params[0], "m": m, "draws": int(opts["draws"])}
        return float(np.mean(mses)), total * 1e3 / len(mses), hp

    if method == "mmr_nn":
        arch = tuple(int(a) for a in opts["arch"])
        cfg, _ = nn.select_nn(
            train, val, arch, opts["lr_grid"], opts["lambda_grid"], int(opts["epochs"]), seed, opts["optimizer"]
        )
        t0 = time.perf_counter()
        params = nn.train(train, arch=arch, config=cfg)
        ms = (time.perf_counter() - t0) * 1e3
        hp = {"lr": cfg.learning_rate, "lambda": cfg.lam, "epochs": cfg.epochs, "arch": list(arch)}
        return _mse(nn.forward(params, test.x), test.f_star), ms, hp

    if method == "2sls":
        t0 = time.perf_counter()
        model = baselines.fit_2sls(pooled)
        ms = (time.perf_counter() - t0) * 1e3
        hp = {"first_stage_f": model.info["first_stage_f"], "weak_instrument": model.info["weak_instrument"]}
        return _mse(model.predict(test.x), test.f_star), ms, hp

    if method == "poly2sls":
        chosen = baselines.fit_poly2sls(pooled, int(opts["max_degree"]), opts["ridge_grid"], int(opts["cv_folds"]), seed)
        t0 = time.perf_counter()
        model = baselines._fit_poly(pooled, chosen.degree, chosen.ridge)
        ms = (time.perf_counter() - t0) * 1e3
        return _mse(model.predict(test.x), test.f_star), ms, {"degree": model.degree, "ridge": model.ridge}

    if method == "direct_krr":
        chosen = baselines.fit_direct_ridge(pooled, None, opts["lambda_grid"], int(opts["cv_folds"]), seed)
        t0 = time.perf_counter()
        model = baselines.fit_direct_ridge(pooled, chosen.kernel_l, [chosen.lam], 2, seed)
        ms = (time.perf_counter() - t0) * 1e3
        return _mse(model.predict(test.x), test.f_star), ms, {"lambda": model.lam, "sigma_l": model.kernel_l.params[0]}

    raise ConfigError(f"unknown method {method!r}")


def _splits(cfg: ExperimentConfig, rep: int):
    sc = cfg.scenario
    param_seed = derive_seed(cfg.master_seed, 2)
    draws = [datagen.generate(sc.spec(sc.n, derive_seed(cfg.master_seed, 0, rep, k), param_seed)) for k in range(3)]
    train, (val, test), _ = datagen.standardize_y(draws[0], draws[1:])
    return train, val, test


def _run_rep(cfg: ExperimentConfig, rep: int, methods: Sequence[str]) -> List[BenchmarkRecord]:
    train, val, test = _splits(cfg, rep)
    rep_seed = derive_seed(cfg.master_seed, 0, rep)
    out = []
    for method in methods:
        seed = derive_seed(cfg.master_seed, 1, rep, METHODS.index(method))
        try:
            mse, ms, hp = _fit_method(method, cfg.options(method), train, val, test, seed, cfg.scenario.kind == "mendelian")
            status = "OK"
        except (NumericalError, InputError, np.linalg.LinAlgError) as exc:
            log.warning("%s failed on repetition %d: %s", method, rep, exc)
            mse, ms, hp, status = float("nan"), 0.0, {"error": str(exc)}, "FAILED"
        out.append(BenchmarkRecord(cfg.scenario.label, method, rep_seed, cfg.scenario.n, mse, int(round(ms)), hp, status))
    return out


def summarize(records: Sequence[BenchmarkRecord]) -> List[dict]:
    """Mean, standard deviation and median of test MSE per (scenario, method)."""
    groups: Dict[tuple, List[BenchmarkRecord]] = {}
    for r in records:
        groups.setdefault((r.scenario, r.method), []).append(r)
    rows = []
    for (scenario, method), rs in groups.items():
        ok = np.array([r.test_mse for r in rs if r.status == "OK"])
        rows.append(
            {
                "scenario": scenario,
                "method": method,
                "n_ok": int(ok.size),
                "n_failed": len(rs) - int(ok.size),
                "mean_mse": float(ok.mean()) if ok.size else float("nan"),
                "std_mse": float(ok.std(ddof=1)) if ok.size > 1 else 0.0,
                "median_mse": float(np.median(ok)) if ok.size else float("nan"),
            }
        )
    return rows


def write_results(records: Sequence[BenchmarkRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for r in records:
            w.writerow(r.row())


def read_results(path) -> List[BenchmarkRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        hp = json.loads(row["hyperparams_json"])
        status = hp.pop("status", "OK")
        out.append(
            BenchmarkRecord(
                row["scenario"], row["method"], int(row["seed"]), int(row["n"]),
                float(row["test_mse"]), int(row["fit_time_ms"]), hp, status,
            )
        )
    return out


def write_summary(summary: Sequence[dict], path) -> None:
    keys = ("scenario", "method", "n_ok", "n_failed", "mean_mse", "std_mse", "median_mse")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, keys, lineterminator="\n")
        w.writeheader()
        for row in summary:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def run_benchmark(cfg: ExperimentConfig, write: bool = True) -> BenchmarkResult:
    """Run every (repetition, method) pair and optionally write the result files.

    Records are ordered by method (config order) then repetition, whatever
    order the workers finish in.  A failing method is recorded as FAILED.
    """
    reps = range(cfg.repetitions)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            futures = {(r, m): pool.submit(_run_rep, cfg, r, [m]) for r in reps for m in cfg.methods}
            by_key = {k: f.result()[0] for k, f in futures.items()}
    else:
        by_key = {}
        for r in reps:
            for rec, m in zip(_run_rep(cfg, r, cfg.methods), cfg.methods):
                by_key[(r, m)] = rec
    records = [by_key[(r, m)] for m in cfg.methods for r in reps]
    result = BenchmarkResult(records, summarize(records))
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results(records, out / "results.csv")
        write_summary(result.summary, out / "summary.csv")
        with open(out / "config.resolved.toml", "wb") as fh:
            tomli_w.dump(cfg.resolved(), fh)
    return result


def run_mendelian_sweep(cfg: ExperimentConfig, sweep: str, values: Optional[Sequence[float]] = None, write: bool = True) -> List[BenchmarkRecord]:
    """One benchmark per value of ``sweep`` with the other parameters as configured.

    Each value writes into ``output_dir/<sweep>=<value>``; the combined
    records go to ``output_dir/results.csv``.
    """
    if sweep not in SWEEPS:
        raise ConfigError(f"sweep must be one of {sorted(SWEEPS)}, got {sweep!r}")
    if cfg.scenario.kind != "mendelian":
        raise ConfigError("mendelian sweep needs scenario.kind = 'mendelian'")
    values = list(SWEEPS[sweep] if values is None else values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    records: List[BenchmarkRecord] = []
    for v in values:
        v = int(v) if sweep == "d_prime" else float(v)
        sc = replace(cfg.scenario, **{sweep: v})
        sub = replace(cfg, scenario=sc, output_dir=str(Path(cfg.output_dir) / f"{sweep}={v:g}"))
        records.extend(run_benchmark(sub, write=write).records)
    if write:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        write_results(records, Path(cfg.output_dir) / "results.csv")
    return records


def _x_value(rec: BenchmarkRecord, axis: str) -> float:
    if axis == "n":
        return float(rec.n)
    params = parse_scenario_label(rec.scenario)
    if axis not in params:
        raise InputError(f"record scenario {rec.scenario!r} has no parameter {axis!r}")
    return float(params[axis])


def emit_plot_data(records: Sequence[BenchmarkRecord], axis: str = "d_prime") -> str:
    """Long-format CSV text ``x_value,method,median,p25,p75`` over successful records.

    Rows are sorted by ``(method, x_value)``.
    """
    if not records:
        raise InputError("no records to summarize")
    cells: Dict[tuple, List[float]] = {}
    for r in records:
        if r.status == "OK":
            cells.setdefault((r.method, _x_value(r, axis)), []).append(r.test_mse)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("x_value", "method", "median", "p25", "p75"))
    for (method, x) in sorted(cells):
        v = np.asarray(cells[(method, x)])
        w.writerow((repr(x), method, repr(float(np.median(v))), repr(float(np.percentile(v, 25))), repr(float(np.percentile(v, 75)))))
    return buf.getvalue()
