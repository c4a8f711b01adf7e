"""Empirical MMR risks in U- and V-statistic form.

Both risks are quadratic forms ``r^T W r`` in the residual vector
``r = y - f(x)``.  The V-statistic weight ``K / n^2`` is positive
semi-definite; the U-statistic weight drops the diagonal and is indefinite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import InputError


@dataclass(frozen=True)
class Dataset:
    """Aligned treatment, outcome and instrument columns.

    ``f_star`` holds the true structural values at ``x`` when known; it is
    only ever used for scoring.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    f_star: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        x = x[:, None] if x.ndim == 1 else x
        z = z[:, None] if z.ndim == 1 else z
        y = np.asarray(self.y, dtype=float).reshape(-1)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)
        n = y.shape[0]
        if n < 1:
            raise InputError("dataset must have at least one row")
        if x.ndim != 2 or z.ndim != 2 or x.shape[0] != n or z.shape[0] != n:
            raise InputError(f"row counts differ: x {x.shape}, y {y.shape}, z {z.shape}")
        arrays = [x, y, z]
        if self.f_star is not None:
            fs = np.asarray(self.f_star, dtype=float).reshape(-1)
            if fs.shape[0] != n:
                raise InputError("f_star length differs from row count")
            object.__setattr__(self, "f_star", fs)
            arrays.append(fs)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise InputError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        fs = None if self.f_star is None else self.f_star[idx]
        return Dataset(self.x[idx], self.y[idx], self.z[idx], fs)

    def with_y(self, y, f_star=None) -> "Dataset":
        return replace(self, y=y, f_star=f_star)

    @staticmethod
    def concat(*parts: "Dataset") -> "Dataset":
        fs = None
        if all(p.f_star is not None for p in parts):
            fs = np.concatenate([p.f_star for p in parts])
        return Dataset(
            np.vstack([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.vstack([p.z for p in parts]),
            fs,
        )


@dataclass(frozen=True)
class WeightMatrix:
    values: np.ndarray
    variant: str  # "V" or "U"


def _square(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError(f"expected a square matrix, got shape {K.shape}")
    return K


def weight_v(K) -> WeightMatrix:
    K = _square(K)
    n = K.shape[0]
    return WeightMatrix(K / float(n * n), "V")


def weight_u(K) -> WeightMatrix:
    K = _square(K)
    n = K.shape[0]
    if n < 2:
        raise InputError("U-statistic weight needs n >= 2")
    W = K / float(n * (n - 1))
    np.fill_diagonal(W, 0.0)
    return WeightMatrix(W, "U")


def empirical_risk(residuals, w) -> float:
    """``r^T W r`` for a weight matrix (or a bare array)."""
    W = w.values if isinstance(w, WeightMatrix) else _square(w)
    r = np.asarray(residuals, dtype=float).reshape(-1)
    if r.shape[0] != W.shape[0]:
        raise InputError(f"residual length {r.shape[0]} does not match weight size {W.shape[0]}")
    risk = float(r @ (W @ r))
    if isinstance(w, WeightMatrix) and w.variant == "V":
        # PSD up to rounding
        risk = max(risk, 0.0)
    return risk


def v_risk(spec: kernels.KernelSpec, z, residuals, block: int = 2048) -> float:
    """V-statistic risk without materializing the full n x n Gram matrix."""
    z = np.asarray(z, dtype=float)
    z = z[:, None] if z.ndim == 1 else z
    r = np.asarray(residuals, dtype=float).reshape(-1)
    n = r.shape[0]
    if z.shape[0] != n:
        raise InputError("residual and instrument lengths differ")
    total = 0.0
    for start in range(0, n, block):
        stop = min(start + block, n)
        total += float(r[start:stop] @ (kernels.cross_gram(spec, z[start:stop], z) @ r))
    return max(total / (n * n), 0.0)


def population_risk_mc(
    f: Callable[[np.ndarray], np.ndarray],
    sem,
    reps: int,
    seed: int,
    kernel: Optional[kernels.KernelSpec] = None,
) -> float:
    """Monte-Carlo estimate of E[(Y - f(X)) (Y' - f(X')) k(Z, Z')].

    Draws ``reps`` independent pairs from the generator spec ``sem``
    (a ``LowDimSpec`` or ``MendelianSpec``); ``n`` and ``seed`` on the spec
    are replaced.  The kernel defaults to a unit Gaussian.  Diagnostics only.
    """
    from . import datagen

    if reps < 1:
        raise InputError("reps must be >= 1")
    kernel = kernel or kernels.KernelSpec.gaussian(1.0)
    seeds = np.random.SeedSequence(seed).generate_state(2)
    extra = {}
    if isinstance(sem, datagen.MendelianSpec) and sem.param_seed is None:
        # both copies come from the same population
        extra["param_seed"] = sem.seed
    a = datagen.generate(replace(sem, n=reps, seed=int(seeds[0]), **extra))
    b = datagen.generate(replace(sem, n=reps, seed=int(seeds[1]), **extra))
    ra = a.y - np.asarray(f(a.x)).reshape(-1)
    rb = b.y - np.asarray(f(b.x)).reshape(-1)
    if kernel.family == "laplacian":
        kv = np.exp(-np.sum(np.abs(a.z - b.z), axis=1) / kernel.params[0])
    else:
        diff = a.z - b.z
        if kernel.family == "ard":
            diff = diff / np.asarray(kernel.params)
        kv = kernels._from_sq(kernel, np.einsum("ij,ij->i", diff, diff))
    return float(np.mean(ra * rb * kv))
