"""Gaussian-process view of the V-statistic objective and analytical LMOCV.

With prior ``f(x) ~ GP(0, delta * l)`` and likelihood ``N(f(x) | y, K^-1)``
the posterior is ``N(c, C)`` with

    C = (K + (delta L)^-1)^-1,        c = C K y.

Writing ``K = G G^T`` (``G = K^{1/2}`` exactly, or ``G = n * U~ V~^{1/2}``
under the Nystrom approximation) and ``H = G^T L G = Q diag(h) Q^T``,

    C = delta L - delta^2 (L G Q) diag(1 / (1 + delta h)) (L G Q)^T
    c = delta (L G Q) diag(1 / (1 + delta h)) Q^T G^T y

so one eigendecomposition of ``H`` serves every ``delta`` on a grid.  The
posterior mean equals ``L alpha`` of the regularized solver at
``delta = 1 / (lam n^2)``.

The leave-M-out error divides the fold's own likelihood factor
``N(y_de, K_de^-1)`` out of the full posterior:

    r = (I - C_de K_de)^-1 (c_de - y_de),     error = sum_folds r^T K_de r.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import linalg

from . import kernels
from .errors import InputError, NumericalError
from .kernels import KernelSpec
from .nystrom import NystromFactors
from .rkhs import DEFAULT_LAMBDA_GRID, psd_sqrt
from .risk import Dataset

DEFAULT_SIGMA_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class GpPosterior:
    c: np.ndarray
    C: np.ndarray
    delta: float
    exact: bool


@dataclass(frozen=True)
class CvPlan:
    M: int
    folds: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.M < 1:
            raise InputError("leave-out size M must be >= 1")
        seen = set()
        for f in self.folds:
            f = np.asarray(f)
            if f.size != self.M:
                raise InputError(f"fold of size {f.size} in a plan with M={self.M}")
            if np.any(f < 0) or seen.intersection(f.tolist()):
                raise InputError("folds must be disjoint non-negative index sets")
            seen.update(f.tolist())

    @property
    def repeats(self) -> int:
        return len(self.folds)

    def check(self, n: int):
        if any(int(np.max(f)) >= n for f in self.folds):
            raise InputError("fold index out of range")


def make_plan(n: int, M: int = 2, seed=0) -> CvPlan:
    """Random disjoint partition into ``n // M`` folds of size ``M``."""
    if not 1 <= M <= n:
        raise InputError(f"need 1 <= M <= n, got M={M}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    k = n // M
    return CvPlan(M, [np.sort(f) for f in perm[: k * M].reshape(k, M)])


def delta_grid_from_lambdas(n: int, lambdas: Sequence[float] = DEFAULT_LAMBDA_GRID) -> List[float]:
    return [1.0 / (lam * n * n) for lam in lambdas]


def sigma_grid(x, factors: Sequence[float] = DEFAULT_SIGMA_FACTORS) -> List[float]:
    med = kernels.median_heuristic(x)
    return [med * f for f in factors]


class _PosteriorFamily:
    """Posterior quantities for every ``delta`` given ``K = G G^T`` and ``L``."""

    def __init__(self, G: np.ndarray, L: np.ndarray, y: np.ndarray):
        LG = L @ G
        H = G.T @ LG
        h, Q = linalg.eigh(0.5 * (H + H.T))
        np.maximum(h, 0.0, out=h)
        self.L = L
        self.h = h
        self.P = LG @ Q
        self.Gy = Q.T @ (G.T @ y)

    def _d(self, delta):
        return 1.0 / (1.0 + delta * self.h)

    def mean(self, delta: float) -> np.ndarray:
        return delta * (self.P @ (self._d(delta) * self.Gy))

    def cov(self, delta: float) -> np.ndarray:
        C = delta * self.L - delta * delta * (self.P * self._d(delta)) @ self.P.T
        return 0.5 * (C + C.T)

    def cov_block(self, delta: float, idx: np.ndarray) -> np.ndarray:
        Pi = self.P[idx]
        C = delta * self.L[np.ix_(idx, idx)] - delta * delta * (Pi * self._d(delta)) @ Pi.T
        return 0.5 * (C + C.T)


def _check_delta(delta):
    if not delta > 0:
        raise InputError("delta must be positive")


def gp_posterior(K, L, y, delta: float) -> GpPosterior:
    _check_delta(delta)
    y = np.asarray(y, dtype=float)
    fam = _PosteriorFamily(psd_sqrt(np.asarray(K, dtype=float)), np.asarray(L, dtype=float), y)
    return GpPosterior(fam.mean(delta), fam.cov(delta), float(delta), True)


def gp_posterior_nystrom(factors: NystromFactors, L, y, delta: float) -> GpPosterior:
    """Posterior with ``K`` replaced by ``n^2 U~ V~ U~^T``."""
    _check_delta(delta)
    y = np.asarray(y, dtype=float)
    G = factors.n * factors.balanced()
    fam = _PosteriorFamily(G, np.asarray(L, dtype=float), y)
    return GpPosterior(fam.mean(delta), fam.cov(delta), float(delta), False)


def _fold_error(C_de, c_de, y_de, K_de, fold_no: int) -> float:
    A = np.eye(K_de.shape[0]) - C_de @ K_de
    try:
        with warnings.catch_warnings():
            # exact singularity is reported below as a NumericalError
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu = linalg.lu_factor(A, check_finite=False)
    except (linalg.LinAlgError, ValueError):
        raise NumericalError(f"I - C_de K_de is singular on fold {fold_no}") from None
    if np.any(np.abs(np.diag(lu[0])) <= 1e-14 * max(1.0, np.abs(A).max())):
        raise NumericalError(f"I - C_de K_de is singular on fold {fold_no}")
    r = linalg.lu_solve(lu, c_de - y_de, check_finite=False)
    return float(r @ K_de @ r)


def lmocv_error(posterior: GpPosterior, K, y, plan: CvPlan) -> float:
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    plan.check(y.shape[0])
    total = 0.0
    for i, f in enumerate(plan.folds):
        ix = np.ix_(f, f)
        total += _fold_error(posterior.C[ix], posterior.c[f], y[f], K[ix], i)
    if not np.isfinite(total):
        raise NumericalError("LMOCV error is not finite")
    return total


def _family_cv(fam: _PosteriorFamily, delta: float, K_blocks, y, plan: CvPlan) -> float:
    c = fam.mean(delta)
    total = 0.0
    for i, (f, K_de) in enumerate(zip(plan.folds, K_blocks)):
        total += _fold_error(fam.cov_block(delta, f), c[f], y[f], K_de, i)
    if not np.isfinite(total):
        raise NumericalError("LMOCV error is not finite")
    return total


def _l_spec(l_family: str, p) -> KernelSpec:
    params = tuple(float(v) for v in np.atleast_1d(p))
    return KernelSpec(l_family, params)


def select_hyperparams(
    data: Dataset,
    kernel_k: KernelSpec,
    l_family: str,
    delta_grid: Sequence[float],
    l_param_grid: Sequence,
    plan: CvPlan,
    factors: Optional[NystromFactors] = None,
):
    """Grid search of ``(delta, l parameters)`` by analytical LMOCV.

    Uses the exact posterior unless Nystrom ``factors`` are given, in which
    case the same factors serve every grid point.  Returns
    ``(best_delta, best_l_spec, cv_table)``; the table has one dict per grid
    point in grid order (``l_params`` outer, ``delta`` inner).  Ties go to
    the larger ``delta``.
    """
    if len(delta_grid) == 0 or len(l_param_grid) == 0:
        raise InputError("hyperparameter grids must be non-empty")
    plan.check(data.n)
    y = data.y
    K_blocks = [kernels.gram(kernel_k, data.z[f]) for f in plan.folds]
    if factors is None:
        G = psd_sqrt(kernels.gram(kernel_k, data.z))
    else:
        if factors.n != data.n:
            raise InputError("factors were built for a different sample size")
        G = data.n * factors.balanced()

    table = []
    best = None
    for p in l_param_grid:
        spec = _l_spec(l_family, p)
        try:
            fam = _PosteriorFamily(G, kernels.gram(spec, data.x), y)
        except (NumericalError, linalg.LinAlgError) as exc:
            fam, err = None, exc
        for delta in delta_grid:
            row = {"delta": float(delta), "l_params": list(spec.params), "cv_error": float("nan"), "status": "OK"}
            try:
                if fam is None:
                    raise NumericalError(str(err))
                row["cv_error"] = _family_cv(fam, float(delta), K_blocks, y, plan)
            except (NumericalError, linalg.LinAlgError):
                row["status"] = "FAILED"
            table.append(row)
            if row["status"] == "OK":
                key = (row["cv_error"], -row["delta"])
                if best is None or key < best[0]:
                    best = (key, float(delta), spec)
    if best is None:
        raise NumericalError("every hyperparameter grid point failed")
    return best[1], best[2], table
