"""Desk-scale checks of the estimator's theoretical properties.

Every check is deterministic given its seed and returns plain data
(dataclasses and lists of dicts) that the CLI serializes as JSON or CSV.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, List, Mapping, Optional, Sequence

import numpy as np
from scipy import linalg, stats

from . import datagen, kernels
from .errors import InputError
from .kernels import KernelSpec
from .risk import Dataset, v_risk, weight_u

SKEW_LIMIT = 0.2
KURT_LIMIT = 0.5


@dataclass
class NormalityReport:
    n: int
    R: int
    estimates: np.ndarray = field(repr=False)
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    verdict: str
    thresholds: dict
    dropped: int = 0
    theta_mean: float = float("nan")
    theta_se: float = float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimates"] = self.estimates.tolist()
        return d


def shape_statistics(values, skew_limit: float = SKEW_LIMIT, kurt_limit: float = KURT_LIMIT):
    """Sample skewness, excess kurtosis and the PASS/FAIL verdict for the limits."""
    v = np.asarray(values, dtype=float)
    sk = float(stats.skew(v))
    ku = float(stats.kurtosis(v))
    verdict = "PASS" if abs(sk) < skew_limit and abs(ku) < kurt_limit else "FAIL"
    return sk, ku, verdict


def normality_self_test(R: int = 500, seed=0) -> tuple:
    """Run the shape statistics on ``R`` standard normal draws."""
    return shape_statistics(np.random.default_rng(seed).standard_normal(R))


def theta_hat(x: np.ndarray, y: np.ndarray, W: np.ndarray, lam: float) -> float:
    """Minimizer of ``(y - theta x)^T W (y - theta x) + lam theta^2``."""
    return float(x @ W @ y) / (float(x @ W @ x) + lam)


def asymptotic_normality_check(n: int = 2000, R: int = 500, seed=0, kernel: Optional[KernelSpec] = None) -> NormalityReport:
    """Shape of ``sqrt(n) (theta_hat - 1)`` over ``R`` draws of the linear scenario.

    Uses ``f(x) = theta x`` with ``lam = 1/n`` and ``W = K / n^2``.  The
    instrument kernel defaults to a Gaussian at the median bandwidth of each
    replication's instruments.
    """
    if R < 30:
        raise InputError("R must be >= 30")
    if n < 2:
        raise InputError("n must be >= 2")
    lam = 1.0 / n
    seeds = np.random.SeedSequence(seed).generate_state(R)
    est, dropped = [], 0
    for s in seeds:
        d = datagen.gen_low_dim(datagen.LowDimSpec("linear", n, int(s)))
        try:
            spec = kernel or KernelSpec.gaussian(kernels.median_heuristic(d.z))
            W = kernels.gram(spec, d.z) / float(n * n)
            t = theta_hat(d.x[:, 0], d.y, W, lam)
            if not np.isfinite(t):
                raise ArithmeticError("non-finite estimate")
        except (ArithmeticError, InputError, linalg.LinAlgError):
            dropped += 1
            continue
        est.append(t)
    if len(est) < 2:
        raise InputError("fewer than two replications succeeded")
    theta = np.asarray(est)
    z = np.sqrt(n) * (theta - 1.0)
    sk, ku, verdict = shape_statistics(z)
    return NormalityReport(
        n=n,
        R=R,
        estimates=z,
        mean=float(z.mean()),
        variance=float(z.var(ddof=1)),
        skewness=sk,
        excess_kurtosis=ku,
        verdict=verdict,
        thresholds={"abs_skewness": SKEW_LIMIT, "abs_excess_kurtosis": KURT_LIMIT},
        dropped=dropped,
        theta_mean=float(theta.mean()),
        theta_se=float(theta.std(ddof=1) / np.sqrt(theta.size)),
    )


def wu_indefiniteness_check(K) -> dict:
    """Trace and eigenvalue signs of the U-statistic weight built from ``K``.

    Failed expectations are listed under ``findings`` rather than raised.
    """
    W = weight_u(K).values
    ev = linalg.eigvalsh(W)
    tol = 1e-12 * float(np.linalg.norm(W, 2)) if W.size else 0.0
    trace = float(np.trace(W))
    findings = []
    if trace != 0.0:
        findings.append(f"trace is {trace!r}, expected exactly 0")
    if not ev[0] < -tol:
        findings.append(f"smallest eigenvalue {ev[0]:.3e} is not below -{tol:.3e}")
    if not ev[-1] > tol:
        findings.append(f"largest eigenvalue {ev[-1]:.3e} is not above {tol:.3e}")
    return {
        "n": int(W.shape[0]),
        "trace": trace,
        "min_eigenvalue": float(ev[0]),
        "max_eigenvalue": float(ev[-1]),
        "tol": tol,
        "indefinite": not findings,
        "findings": findings,
    }


def identification_probe(
    scenario,
    candidates: Mapping[str, Callable],
    n: int = 10_000,
    seed=0,
    kernel: Optional[KernelSpec] = None,
) -> dict:
    """Empirical V-risk of each candidate structural function.

    ``scenario`` is a generator spec (``n`` and ``seed`` are overridden) or a
    ready ``Dataset``.  Returns the table in candidate order, the minimizing
    candidate and the gap to the runner-up.
    """
    if not candidates:
        raise InputError("need at least one candidate")
    if isinstance(scenario, Dataset):
        data = scenario
    else:
        from dataclasses import replace

        data = datagen.generate(replace(scenario, n=n, seed=seed))
    spec = kernel or KernelSpec.gaussian(1.0)
    rows = []
    for name, f in candidates.items():
        r = data.y - np.asarray(f(data.x[:, 0] if data.x.shape[1] == 1 else data.x), dtype=float).reshape(-1)
        rows.append({"candidate": name, "v_risk": v_risk(spec, data.z, r)})
    ordered = sorted(rows, key=lambda r: r["v_risk"])
    margin = ordered[1]["v_risk"] - ordered[0]["v_risk"] if len(ordered) > 1 else float("nan")
    return {"table": rows, "minimizer": ordered[0]["candidate"], "margin": margin}


def consistency_sweep(
    scenario: str,
    method: str,
    n_list: Sequence[int],
    seeds: Sequence[int],
    overrides: Optional[dict] = None,
) -> List[dict]:
    """Median test MSE of ``method`` over ``seeds`` for each sample size.

    ``scenario`` is a low-dimensional structural function name; each seed
    plays the role of a benchmark master seed with one repetition.
    """
    from . import harness

    n_list = list(n_list)
    if not n_list:
        raise InputError("n_list must be non-empty")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InputError("n_list must be strictly increasing")
    table = []
    for n in n_list:
        mses = []
        for s in seeds:
            cfg = harness.ExperimentConfig(
                scenario=harness.ScenarioConfig(kind="low_dim", f_star=scenario, n=int(n)),
                methods=[method],
                repetitions=1,
                master_seed=int(s),
                method_options=dict(overrides or {}),
            )
            rec = harness.run_benchmark(cfg, write=False).records[0]
            if rec.status != "OK":
                raise ArithmeticError(f"{method} failed at n={n}, seed={s}: {rec.hyperparams.get('error')}")
            mses.append(rec.test_mse)
        table.append({"n": int(n), "median_mse": float(np.median(mses)), "mses": mses})
    return table
