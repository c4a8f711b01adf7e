"""Closed-form MMR-IV estimator over an RKHS of treatments.

The minimizer of ``(y - L a)^T W (y - L a) + lam a^T L a`` with
``W = K / n^2`` satisfies ``(W L + lam I) a = W y``.  That system is not
symmetric, but with ``S = W^{1/2}`` it is equivalent to the SPD system

    a = S (S L S + lam I)^{-1} S y

which is solved by Cholesky.  ``W L + lam I`` is nonsingular for every
``lam > 0`` even when ``L`` is rank deficient, so duplicate treatments need
no special path; jitter on ``L`` is only used if the Cholesky factorization
itself breaks down.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import linalg

from . import kernels
from .errors import InputError, NumericalError
from .kernels import KernelSpec
from .risk import Dataset

# lambda grid used for selection when nothing else is configured
DEFAULT_LAMBDA_GRID = tuple(10.0 ** -e for e in range(8, 0, -1))

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class RkhsModel:
    alpha: np.ndarray
    train_x: np.ndarray
    kernel_l: KernelSpec
    lam: float
    jitter_used: float = 0.0
    info: dict = field(default_factory=dict, compare=False)
    offset: float = 0.0

    def __post_init__(self):
        if self.alpha.shape[0] != self.train_x.shape[0]:
            raise InputError("alpha length must equal the number of training treatments")
        if not self.lam > 0:
            raise InputError("lambda must be positive")

    def predict(self, x_new) -> np.ndarray:
        return predict(self, x_new)


def psd_sqrt(A: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix; negative rounding eigenvalues are clipped."""
    ev, Q = linalg.eigh(A)
    np.maximum(ev, 0.0, out=ev)
    S = (Q * np.sqrt(ev)) @ Q.T
    return 0.5 * (S + S.T)


def solve_alpha(K: np.ndarray, L: np.ndarray, y: np.ndarray, lam: float):
    """Return ``(alpha, jitter)`` for Gram matrices ``K`` (instruments) and ``L`` (treatments)."""
    if not lam > 0:
        raise InputError("lambda must be positive")
    n = y.shape[0]
    S = psd_sqrt(K / float(n * n))
    Sy = S @ y
    eye = np.eye(n)
    A = None
    for eps in JITTER_LADDER:
        A = S @ (L + eps * eye) @ S
        A = 0.5 * (A + A.T)
        A[np.diag_indices(n)] += lam
        try:
            cf = linalg.cho_factor(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        return S @ linalg.cho_solve(cf, Sy, check_finite=False), eps
    raise NumericalError(
        f"Cholesky factorization failed after jitter {JITTER_LADDER[-1]:g}; "
        f"condition estimate {np.linalg.cond(A):.3e}"
    )


def fit(data: Dataset, kernel_k: KernelSpec, kernel_l: KernelSpec, lam: float) -> RkhsModel:
    if data.n < 2:
        raise InputError("fit needs at least two rows")
    K = kernels.gram(kernel_k, data.z)
    L = kernels.gram(kernel_l, data.x)
    alpha, eps = solve_alpha(K, L, data.y, lam)
    return RkhsModel(alpha, data.x.copy(), kernel_l, float(lam), eps)


def predict(model: RkhsModel, x_new) -> np.ndarray:
    x_new = np.asarray(x_new, dtype=float)
    x_new = x_new[:, None] if x_new.ndim == 1 else x_new
    if x_new.shape[1] != model.train_x.shape[1]:
        raise InputError(f"expected {model.train_x.shape[1]} treatment columns, got {x_new.shape[1]}")
    return kernels.cross_gram(model.kernel_l, x_new, model.train_x) @ model.alpha + model.offset


def objective(data: Dataset, kernel_k: KernelSpec, kernel_l: KernelSpec, lam: float, alpha) -> float:
    """Regularized V-statistic objective at coefficient vector ``alpha``."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (data.n,):
        raise InputError(f"alpha must have shape ({data.n},)")
    K = kernels.gram(kernel_k, data.z)
    L = kernels.gram(kernel_l, data.x)
    return objective_from_grams(K, L, data.y, lam, alpha)


def objective_from_grams(K, L, y, lam, alpha) -> float:
    n = y.shape[0]
    r = y - L @ alpha
    return float(r @ K @ r) / (n * n) + lam * float(alpha @ L @ alpha)


def save_model(model: RkhsModel, path, y_transform=None) -> None:
    """Write a model as ``.npz``: arrays ``alpha``, ``train_x`` and a JSON ``meta`` string.

    ``meta`` holds the hypothesis kernel, lambda, jitter and the optional
    outcome transform used to map predictions back to the raw scale.
    """
    meta = {
        "kind": "rkhs",
        "kernel_l": model.kernel_l.to_dict(),
        "lambda": model.lam,
        "jitter_used": model.jitter_used,
        "info": model.info,
        "offset": model.offset,
    }
    if y_transform is not None:
        meta["y_transform"] = {"mean": y_transform.mean, "scale": y_transform.scale}
    with open(path, "wb") as fh:
        np.savez(fh, alpha=model.alpha, train_x=model.train_x, meta=np.array(json.dumps(meta, sort_keys=True)))


def load_model(path):
    """Inverse of :func:`save_model`; returns ``(model, y_transform or None)``."""
    from .datagen import YTransform

    with np.load(Path(path), allow_pickle=False) as npz:
        meta = json.loads(str(npz["meta"]))
        model = RkhsModel(
            npz["alpha"].copy(),
            npz["train_x"].copy(),
            KernelSpec.from_dict(meta["kernel_l"]),
            float(meta["lambda"]),
            float(meta["jitter_used"]),
            meta.get("info", {}),
            float(meta.get("offset", 0.0)),
        )
    yt: Optional[YTransform] = None
    if "y_transform" in meta:
        yt = YTransform(meta["y_transform"]["mean"], meta["y_transform"]["scale"])
    return model, yt
