"""Positive-definite kernels, Gram matrices and bandwidth heuristics.

The same kernel type is used for the instrument kernel ``k`` and the
hypothesis kernel ``l``.  All families here are bounded and integrally
strictly positive definite.

Config form (one inline table per kernel)::

    kernel.k = { family = "sum_gaussians", mode = "median" }
    kernel.l = { family = "gaussian", sigma = 0.7 }
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import InputError

FAMILIES = ("gaussian", "laplacian", "imq", "sum_gaussians", "ard")

# Ratios of the second and third bandwidth to the median bandwidth.
SUM_GAUSSIAN_RATIOS = (1.0, 0.1, 10.0)


@dataclass(frozen=True)
class KernelSpec:
    """An immutable kernel family plus its parameters.

    Use the classmethod constructors rather than filling ``params`` by hand.
    """

    family: str
    params: tuple

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown kernel family {self.family!r}")
        values = np.asarray(self.params, dtype=float)
        if values.size == 0 or not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise InputError(f"{self.family} kernel parameters must be positive, got {self.params}")
        if self.family == "sum_gaussians" and len(self.params) != 3:
            raise InputError("sum_gaussians needs exactly three bandwidths")

    @classmethod
    def gaussian(cls, sigma: float) -> "KernelSpec":
        return cls("gaussian", (float(sigma),))

    @classmethod
    def laplacian(cls, sigma: float) -> "KernelSpec":
        return cls("laplacian", (float(sigma),))

    @classmethod
    def imq(cls, c: float, gamma: float) -> "KernelSpec":
        return cls("imq", (float(c), float(gamma)))

    @classmethod
    def sum_gaussians(cls, sigmas) -> "KernelSpec":
        return cls("sum_gaussians", tuple(float(s) for s in sigmas))

    @classmethod
    def ard(cls, lengthscales) -> "KernelSpec":
        return cls("ard", tuple(float(s) for s in np.atleast_1d(lengthscales)))

    @property
    def sigma(self) -> float:
        if self.family not in ("gaussian", "laplacian"):
            raise AttributeError(f"{self.family} kernel has no single sigma")
        return self.params[0]

    def to_dict(self) -> dict:
        if self.family in ("gaussian", "laplacian"):
            return {"family": self.family, "sigma": self.params[0]}
        if self.family == "imq":
            return {"family": "imq", "c": self.params[0], "gamma": self.params[1]}
        if self.family == "sum_gaussians":
            return {"family": "sum_gaussians", "sigmas": list(self.params)}
        return {"family": "ard", "lengthscales": list(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], points=None) -> "KernelSpec":
        """Build a spec from its config table.

        ``mode = "median"`` resolves bandwidths from ``points`` with the
        median heuristic (``gaussian``, ``laplacian`` and ``sum_gaussians``).
        """
        family = d.get("family")
        if family not in FAMILIES:
            raise InputError(f"unknown kernel family {family!r}")
        if d.get("mode") == "median":
            if points is None:
                raise InputError("median mode needs the points to compute a bandwidth from")
            if family == "sum_gaussians":
                return sum_gaussians_from_median(points)
            if family in ("gaussian", "laplacian"):
                scale = float(d.get("scale", 1.0))
                return cls(family, (scale * median_heuristic(points),))
            raise InputError(f"median mode is not defined for {family}")
        try:
            if family in ("gaussian", "laplacian"):
                return cls(family, (float(d["sigma"]),))
            if family == "imq":
                return cls.imq(d["c"], d["gamma"])
            if family == "sum_gaussians":
                return cls.sum_gaussians(d["sigmas"])
            return cls.ard(d["lengthscales"])
        except KeyError as exc:
            raise InputError(f"{family} kernel config is missing {exc}") from None


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InputError(f"expected an (n, dim) array, got shape {a.shape}")
    return a


def _check_dim(spec: KernelSpec, dim: int):
    if spec.family == "ard" and dim != len(spec.params):
        raise InputError(f"ARD kernel has {len(spec.params)} lengthscales but inputs have dimension {dim}")


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances via max(|a|^2 + |b|^2 - 2<a,b>, 0)."""
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


def _from_sq(spec: KernelSpec, d2: np.ndarray) -> np.ndarray:
    fam = spec.family
    if fam == "gaussian":
        return np.exp(-d2 / (2.0 * spec.params[0] ** 2))
    if fam == "imq":
        c, gamma = spec.params
        return (c * c + d2) ** (-gamma)
    if fam == "sum_gaussians":
        out = np.zeros_like(d2)
        for s in spec.params:
            out += np.exp(-d2 / (2.0 * s * s))
        return out / 3.0
    if fam == "ard":
        return np.exp(-0.5 * d2)
    raise AssertionError(fam)


def evaluate(spec: KernelSpec, z, z_prime) -> float:
    """k(z, z') for a single pair of points."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    zp = np.atleast_1d(np.asarray(z_prime, dtype=float))
    if z.shape != zp.shape or z.ndim != 1:
        raise InputError(f"dimension mismatch: {z.shape} vs {zp.shape}")
    _check_dim(spec, z.size)
    diff = z - zp
    if spec.family == "laplacian":
        return float(np.exp(-np.sum(np.abs(diff)) / spec.params[0]))
    if spec.family == "ard":
        diff = diff / np.asarray(spec.params)
    return float(_from_sq(spec, np.asarray(np.dot(diff, diff))))


def cross_gram(spec: KernelSpec, a, b) -> np.ndarray:
    """The (len(a), len(b)) matrix of k(a_i, b_j)."""
    a, b = _as_points(a), _as_points(b)
    if a.shape[1] != b.shape[1]:
        raise InputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    _check_dim(spec, a.shape[1])
    if spec.family == "laplacian":
        return np.exp(-cdist(a, b, "cityblock") / spec.params[0])
    if spec.family == "ard":
        scale = np.asarray(spec.params)
        a, b = a / scale, b / scale
    return _from_sq(spec, sq_dists(a, b))


def gram(spec: KernelSpec, points) -> np.ndarray:
    """Symmetric Gram matrix of ``points``; the upper triangle is mirrored."""
    p = _as_points(points)
    if p.shape[0] == 0:
        raise InputError("gram of an empty point set")
    _check_dim(spec, p.shape[1])
    if spec.family == "laplacian":
        d = cdist(p, p, "cityblock")
    else:
        q = p / np.asarray(spec.params) if spec.family == "ard" else p
        d = sq_dists(q, q)
    np.fill_diagonal(d, 0.0)
    d = np.triu(d) + np.triu(d, 1).T
    if spec.family == "laplacian":
        return np.exp(-d / spec.params[0])
    return _from_sq(spec, d)


def median_heuristic(points) -> float:
    """Median of all pairwise Euclidean distances.

    With an even number of pairs this is the mean of the two central values.
    """
    p = _as_points(points)
    if p.shape[0] < 2:
        raise InputError("median heuristic needs at least two points")
    med = float(np.median(pdist(p)))
    if not med > 0.0:
        raise InputError("median interpoint distance is zero; cannot use it as a bandwidth")
    return med


def sum_gaussians_from_median(points) -> KernelSpec:
    """Three-Gaussian mixture with bandwidths (1, 0.1, 10) times the median distance."""
    med = median_heuristic(points)
    return KernelSpec.sum_gaussians([r * med for r in SUM_GAUSSIAN_RATIOS])
