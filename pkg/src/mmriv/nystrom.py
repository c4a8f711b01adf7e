"""Nystrom approximation of the V-statistic weight and the Woodbury solver.

``W = K / n^2`` is approximated as ``U~ diag(V~) U~^T`` from ``m`` uniformly
sampled landmarks, with ``U~ = sqrt(m/n) W_nm U V^{-1}`` and ``V~ = (n/m) V``
where ``W_mm = U diag(V) U^T``.

The solver evaluates

    alpha = lam^-1 [I - U~ (lam^-1 U~^T L U~ + V~^-1)^-1 U~^T lam^-1 L] U~ V~ U~^T y

through the balanced factor ``B = U~ V~^{1/2}`` (so ``U~ V~ U~^T = B B^T``),
for which the inner matrix becomes ``I + lam^-1 B^T L B``: algebraically
identical, but with eigenvalues bounded below by one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import kernels
from .errors import InputError, NumericalError
from .kernels import KernelSpec
from .rkhs import RkhsModel
from .risk import Dataset

EIG_FLOOR = 1e-12
DEFAULT_M = 300
DEFAULT_DRAWS = 10


@dataclass(frozen=True)
class NystromFactors:
    u_tilde: np.ndarray
    v_tilde: np.ndarray
    subset: np.ndarray
    dropped_eigs: int

    @property
    def n(self) -> int:
        return self.u_tilde.shape[0]

    @property
    def rank(self) -> int:
        return self.v_tilde.shape[0]

    def balanced(self) -> np.ndarray:
        """``B`` with ``B B^T = U~ diag(V~) U~^T``."""
        return self.u_tilde * np.sqrt(self.v_tilde)

    def reconstruct(self) -> np.ndarray:
        B = self.balanced()
        return B @ B.T


def sample_subset(n: int, m: int, seed) -> np.ndarray:
    if not 1 <= m <= n:
        raise InputError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=m, replace=False))


def _factors(W_nm: np.ndarray, W_mm: np.ndarray, subset: np.ndarray) -> NystromFactors:
    n, m = W_nm.shape
    ev, U = linalg.eigh(0.5 * (W_mm + W_mm.T))
    top = ev.max() if ev.size else 0.0
    keep = ev > EIG_FLOOR * top if top > 0 else np.zeros_like(ev, dtype=bool)
    if not keep.any():
        raise NumericalError("all landmark eigenvalues are below the floor; degenerate subset")
    ev, U = ev[keep], U[:, keep]
    u_tilde = np.sqrt(m / n) * (W_nm @ U) / ev
    v_tilde = (n / m) * ev
    return NystromFactors(u_tilde, v_tilde, subset, int((~keep).sum()))


def nystrom_factors(K, m: int, seed) -> NystromFactors:
    """Factors of ``K / n^2`` from a full Gram matrix."""
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    subset = sample_subset(n, m, seed)
    W_nm = K[:, subset] / float(n * n)
    return _factors(W_nm, W_nm[subset], subset)


def nystrom_factors_from_kernel(spec: KernelSpec, z, m: int, seed) -> NystromFactors:
    """Same as :func:`nystrom_factors` but only evaluates the ``n x m`` block."""
    z = np.asarray(z, dtype=float)
    z = z[:, None] if z.ndim == 1 else z
    n = z.shape[0]
    subset = sample_subset(n, m, seed)
    W_nm = kernels.cross_gram(spec, z, z[subset]) / float(n * n)
    return _factors(W_nm, W_nm[subset], subset)


def woodbury_alpha(B: np.ndarray, L: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(B B^T L + lam I) alpha = B B^T y`` in O(n r^2 + n^2 r)."""
    if not lam > 0:
        raise InputError("lambda must be positive")
    v = B @ (B.T @ y)
    LB = L @ B
    inner = np.eye(B.shape[1]) + (B.T @ LB) / lam
    inner = 0.5 * (inner + inner.T)
    try:
        cf = linalg.cho_factor(inner, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise NumericalError(f"inner Woodbury system is singular (cond {np.linalg.cond(inner):.3e})") from None
    Lv = L @ v
    return (v - B @ linalg.cho_solve(cf, B.T @ Lv / lam, check_finite=False)) / lam


def fit_from_factors(data: Dataset, factors: NystromFactors, kernel_l: KernelSpec, lam: float, L=None) -> RkhsModel:
    if factors.n != data.n:
        raise InputError("factors were built for a different sample size")
    if L is None:
        L = kernels.gram(kernel_l, data.x)
    alpha = woodbury_alpha(factors.balanced(), L, data.y, lam)
    info = {"m": int(factors.subset.size), "rank": factors.rank, "dropped_eigs": factors.dropped_eigs}
    return RkhsModel(alpha, data.x.copy(), kernel_l, float(lam), 0.0, info)


def fit_nystrom(
    data: Dataset, kernel_k: KernelSpec, kernel_l: KernelSpec, lam: float, m: int = DEFAULT_M, seed=0
) -> RkhsModel:
    if data.n < 2:
        raise InputError("fit needs at least two rows")
    factors = nystrom_factors_from_kernel(kernel_k, data.z, m, seed)
    return fit_from_factors(data, factors, kernel_l, lam)
