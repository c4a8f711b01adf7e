"""Reference estimators: 2SLS, polynomial 2SLS with ridge, and direct kernel ridge."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from . import kernels
from .errors import InputError, NumericalError
from .kernels import KernelSpec
from .rkhs import DEFAULT_LAMBDA_GRID, RkhsModel
from .risk import Dataset

# singular-value ratio below which a least-squares design counts as rank deficient
RANK_TOL = 1e-10
WEAK_F = 10.0
DEFAULT_RIDGE_GRID = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)
DEFAULT_MAX_DEGREE = 5


def _lstsq(A: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    U, s, Vt = linalg.svd(A, full_matrices=False, check_finite=False)
    if s.size == 0 or s[-1] <= RANK_TOL * s[0]:
        raise NumericalError(f"{what} design is rank deficient (singular value ratio {s[-1] / s[0]:.3e})")
    return Vt.T @ ((U.T @ b) / (s if b.ndim == 1 else s[:, None]))


def _with_intercept(a: np.ndarray) -> np.ndarray:
    return np.hstack([a, np.ones((a.shape[0], 1))])


@dataclass(frozen=True)
class LinearModel:
    """``f(x) = x @ slope + intercept``; ``coefficients`` stores slopes then intercept."""

    coefficients: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.coefficients)):
            raise NumericalError("non-finite regression coefficients")

    @property
    def slope(self) -> np.ndarray:
        return self.coefficients[:-1]

    @property
    def intercept(self) -> float:
        return float(self.coefficients[-1])

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = x[:, None] if x.ndim == 1 else x
        if x.shape[1] != self.slope.shape[0]:
            raise InputError(f"expected {self.slope.shape[0]} treatment columns, got {x.shape[1]}")
        return x @ self.slope + self.intercept


def first_stage_f(z: np.ndarray, x: np.ndarray) -> float:
    """F statistic of the first-stage regression of one treatment column on ``[Z, 1]``."""
    n, k = z.shape
    Zc = _with_intercept(z)
    coef, *_ = np.linalg.lstsq(Zc, x, rcond=None)
    rss = float(np.sum((x - Zc @ coef) ** 2))
    tss = float(np.sum((x - x.mean()) ** 2))
    if rss <= 0.0:
        return float("inf")
    return ((tss - rss) / k) / (rss / (n - k - 1))


def fit_2sls(data: Dataset) -> LinearModel:
    """Least squares of X on ``[Z, 1]``, then of Y on ``[X_hat, 1]``.

    ``info["first_stage_f"]`` holds the smallest first-stage F statistic
    across treatment columns and ``info["weak_instrument"]`` flags F < 10.
    """
    n, d = data.x.shape
    dz = data.z.shape[1]
    if n <= d + dz:
        raise InputError(f"2SLS needs n > d + d' ({n} <= {d + dz})")
    Zc = _with_intercept(data.z)
    x_hat = Zc @ _lstsq(Zc, data.x, "first-stage")
    coef = _lstsq(_with_intercept(x_hat), data.y, "second-stage")
    F = min(first_stage_f(data.z, data.x[:, j]) for j in range(d))
    return LinearModel(coef, {"first_stage_f": F, "weak_instrument": bool(F < WEAK_F)})


def fit_ols(data: Dataset) -> LinearModel:
    """Ordinary least squares of Y on ``[X, 1]``, ignoring the instruments."""
    return LinearModel(_lstsq(_with_intercept(data.x), data.y, "OLS"))


# polynomial two-stage ridge


@dataclass(frozen=True)
class PolyFeatures:
    """Per-column powers ``1..degree`` (no cross terms), standardized with stored statistics."""

    degree: int
    mean: np.ndarray
    scale: np.ndarray

    @staticmethod
    def raw(a: np.ndarray, degree: int) -> np.ndarray:
        return np.hstack([a ** p for p in range(1, degree + 1)])

    @classmethod
    def fit(cls, a: np.ndarray, degree: int) -> "PolyFeatures":
        F = cls.raw(a, degree)
        scale = F.std(axis=0)
        # constant columns (e.g. powers of 0/1 instruments) keep scale 1
        scale[scale <= 1e-12 * max(1.0, np.abs(F).max())] = 1.0
        return cls(degree, F.mean(axis=0), scale)

    def __call__(self, a: np.ndarray) -> np.ndarray:
        return (self.raw(a, self.degree) - self.mean) / self.scale


def _ridge(F: np.ndarray, t: np.ndarray, ridge: float):
    """Ridge on standardized features with an unpenalized intercept."""
    fm = F.mean(axis=0)
    tm = t.mean(axis=0)
    Fc = F - fm
    if ridge == 0.0:
        w = _lstsq(Fc, t - tm, "polynomial")
    else:
        A = Fc.T @ Fc
        A[np.diag_indices_from(A)] += ridge * F.shape[0]
        w = linalg.solve(A, Fc.T @ (t - tm), assume_a="pos")
    return w, tm - fm @ w


@dataclass(frozen=True)
class PolyRidgeModel:
    degree: int
    ridge: float
    z_features: PolyFeatures
    x_features: PolyFeatures
    stage1: tuple  # (weights, intercepts): Z features -> each X feature
    stage2: tuple  # (weights, intercept): X features -> Y
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.degree < 1:
            raise InputError("degree must be >= 1")

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = x[:, None] if x.ndim == 1 else x
        w, b = self.stage2
        return self.x_features(x) @ w + b

    def predict_from_instruments(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        z = z[:, None] if z.ndim == 1 else z
        w1, b1 = self.stage1
        w2, b2 = self.stage2
        return (self.z_features(z) @ w1 + b1) @ w2 + b2

    def linear_coefficients(self) -> np.ndarray:
        """Slopes and intercept on the raw treatment scale (degree 1 only)."""
        if self.degree != 1:
            raise InputError("raw-scale linear coefficients only exist at degree 1")
        w, b = self.stage2
        slope = w / self.x_features.scale
        return np.append(slope, b - self.x_features.mean @ slope)


def _fit_poly(data: Dataset, degree: int, ridge: float) -> PolyRidgeModel:
    zf = PolyFeatures.fit(data.z, degree)
    xf = PolyFeatures.fit(data.x, degree)
    FZ, FX = zf(data.z), xf(data.x)
    w1, b1 = _ridge(FZ, FX, ridge)
    w2, b2 = _ridge(FZ @ w1 + b1, data.y, ridge)
    return PolyRidgeModel(degree, float(ridge), zf, xf, (w1, b1), (w2, b2))


def _kfold(n: int, k: int, seed=0):
    if not 2 <= k <= n:
        raise InputError(f"need 2 <= cv_folds <= n, got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def fit_poly2sls(
    data: Dataset,
    max_degree: int = DEFAULT_MAX_DEGREE,
    ridge_grid: Sequence[float] = DEFAULT_RIDGE_GRID,
    cv_folds: int = 5,
    seed=0,
) -> PolyRidgeModel:
    """Two-stage ridge on polynomial features with degree and ridge chosen by k-fold CV.

    The CV score is the held-out error of predicting Y from the instruments
    through both stages.  Within a degree the ridge with the lowest score
    wins (ties to the larger ridge).  Across degrees the smallest degree
    whose score is within one paired standard error of the best is taken,
    which keeps noise from pushing the degree up.
    """
    if max_degree < 1:
        raise InputError("max_degree must be >= 1")
    if any(r < 0 for r in ridge_grid) or not ridge_grid:
        raise InputError("ridge grid must be non-empty and non-negative")
    n_feat = max_degree * max(data.x.shape[1], data.z.shape[1])
    if data.n <= n_feat + 1:
        raise InputError(f"n = {data.n} too small for degree {max_degree}")
    folds = _kfold(data.n, cv_folds, seed)
    table = []
    losses = {}
    for degree in range(1, max_degree + 1):
        for ridge in ridge_grid:
            loss = np.empty(data.n)
            try:
                for f in folds:
                    mask = np.ones(data.n, dtype=bool)
                    mask[f] = False
                    model = _fit_poly(data.subset(np.flatnonzero(mask)), degree, ridge)
                    loss[f] = (data.y[f] - model.predict_from_instruments(data.z[f])) ** 2
                err = float(loss.mean())
            except (NumericalError, linalg.LinAlgError):
                err = float("inf")
            table.append({"degree": degree, "ridge": float(ridge), "cv_error": err})
            if np.isfinite(err):
                key = (err, -ridge)
                if degree not in losses or key < losses[degree][0]:
                    losses[degree] = (key, ridge, loss)
    if not losses:
        raise NumericalError("every polynomial 2SLS grid point failed")
    best_deg = min(losses, key=lambda k: (losses[k][0], k))
    ref = losses[best_deg][2]
    chosen = best_deg
    for degree in sorted(losses):
        if degree >= best_deg:
            break
        diff = losses[degree][2] - ref
        if diff.mean() <= diff.std(ddof=1) / np.sqrt(data.n):
            chosen = degree
            break
    model = _fit_poly(data, chosen, losses[chosen][1])
    model.info["cv_table"] = table
    return model


def _krr_alpha(L: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    A = L.copy()
    A[np.diag_indices_from(A)] += lam * L.shape[0]
    return linalg.solve(A, y, assume_a="pos", check_finite=False)


def fit_direct_ridge(
    data: Dataset,
    kernel_l: Optional[KernelSpec] = None,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    cv_folds: int = 5,
    seed=0,
) -> RkhsModel:
    """Kernel ridge regression of Y on X, ignoring Z; lambda by k-fold CV.

    Solves ``(L + n lam I) a = y - mean(y)``; the mean is kept as the model
    offset, so constant outcomes give a constant predictor.  The kernel
    defaults to a Gaussian at the median bandwidth of X.
    """
    if data.n < 2:
        raise InputError("fit needs at least two rows")
    if not lambda_grid or any(not lam > 0 for lam in lambda_grid):
        raise InputError("lambda grid must be non-empty and positive")
    if kernel_l is None:
        kernel_l = KernelSpec.gaussian(kernels.median_heuristic(data.x))
    L = kernels.gram(kernel_l, data.x)
    folds = _kfold(data.n, min(cv_folds, data.n), seed)
    table, best = [], None
    for lam in lambda_grid:
        err = 0.0
        try:
            for f in folds:
                tr = np.setdiff1d(np.arange(data.n), f)
                mu = data.y[tr].mean()
                a = _krr_alpha(L[np.ix_(tr, tr)], data.y[tr] - mu, lam)
                err += float(np.sum((data.y[f] - L[np.ix_(f, tr)] @ a - mu) ** 2))
            err /= data.n
        except linalg.LinAlgError:
            err = float("inf")
        table.append({"lambda": float(lam), "cv_error": err})
        key = (err, -lam)
        if np.isfinite(err) and (best is None or key < best[0]):
            best = (key, lam)
    if best is None:
        raise NumericalError("every direct ridge grid point failed")
    lam = float(best[1])
    mu = float(data.y.mean())
    try:
        alpha = _krr_alpha(L, data.y - mu, lam)
    except linalg.LinAlgError:
        raise NumericalError(f"kernel ridge system is singular at lambda {lam:g}") from None
    return RkhsModel(alpha, data.x.copy(), kernel_l, lam, 0.0, {"cv_table": table}, mu)
