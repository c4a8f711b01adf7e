"""Seeded synthetic structural-equation generators.

Random streams: every generator call spawns independent PCG64 sub-streams
from ``numpy.random.SeedSequence(seed)`` in a fixed order, one per variable
column.  Low-dimensional rows use the order ``[z, e, gamma, delta]``.  The
Mendelian generator draws its per-population parameters from
``SeedSequence(param_seed)`` spawned as ``[p, alpha]`` and its rows from
``SeedSequence(seed)`` spawned as ``[z, e, gamma, delta]``.  Adding a new
column must append a stream, never reorder the existing ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InputError
from .risk import Dataset

STRUCTURAL_FUNCTIONS = {
    "abs": np.abs,
    "linear": lambda x: np.asarray(x, dtype=float).copy(),
    "sin": np.sin,
    "step": lambda x: (np.asarray(x) >= 0).astype(float),
}


def structural(name: str):
    try:
        return STRUCTURAL_FUNCTIONS[name]
    except KeyError:
        raise InputError(f"unknown structural function {name!r}; choose from {sorted(STRUCTURAL_FUNCTIONS)}") from None


@dataclass(frozen=True)
class LowDimSpec:
    """Y = f*(X) + e + delta, X = Z1 + e + gamma, Z ~ Uniform([-3, 3]^2)."""

    f_star: str = "sin"
    n: int = 2000
    seed: int = 0
    e_std: float = 1.0
    gamma_std: float = 0.1
    delta_std: float = 0.1

    def __post_init__(self):
        structural(self.f_star)
        if self.n < 1:
            raise InputError("n must be >= 1")


@dataclass(frozen=True)
class MendelianSpec:
    """Y = beta X + c1 e + delta, X = sum_i alpha_i Z_i + c2 e + gamma, Z_i ~ Bin(2, p_i).

    ``param_seed`` fixes the per-population draw of ``p`` and ``alpha``; it
    defaults to ``seed``.
    """

    d_prime: int = 16
    beta: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    n: int = 10_000
    seed: int = 0
    param_seed: Optional[int] = None

    def __post_init__(self):
        if self.d_prime < 1:
            raise InputError("d_prime must be >= 1")
        if self.n < 1:
            raise InputError("n must be >= 1")


def _streams(seed: int, k: int):
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(k)]


def gen_low_dim(spec: LowDimSpec) -> Dataset:
    f = structural(spec.f_star)
    rz, re, rg, rd = _streams(spec.seed, 4)
    n = spec.n
    z = rz.uniform(-3.0, 3.0, size=(n, 2))
    e = re.standard_normal(n) * spec.e_std
    gamma = rg.standard_normal(n) * spec.gamma_std
    delta = rd.standard_normal(n) * spec.delta_std
    x = z[:, 0] + e + gamma
    fx = f(x)
    y = fx + e + delta
    return Dataset(x[:, None], y, z, fx)


def mendelian_params(d_prime: int, param_seed: int):
    """Per-population allele frequencies ``p`` and instrument strengths ``alpha``."""
    rp, ra = _streams(param_seed, 2)
    p = rp.uniform(0.1, 0.9, size=d_prime)
    alpha = ra.uniform(0.8 / d_prime, 1.2 / d_prime, size=d_prime)
    return p, alpha


def gen_mendelian(spec: MendelianSpec) -> Dataset:
    param_seed = spec.seed if spec.param_seed is None else spec.param_seed
    p, alpha = mendelian_params(spec.d_prime, param_seed)
    rz, re, rg, rd = _streams(spec.seed, 4)
    n = spec.n
    z = rz.binomial(2, p, size=(n, spec.d_prime)).astype(float)
    e = re.standard_normal(n)
    gamma = rg.standard_normal(n) * 0.1
    delta = rd.standard_normal(n) * 0.1
    x = z @ alpha + spec.c2 * e + gamma
    fx = spec.beta * x
    y = fx + spec.c1 * e + delta
    return Dataset(x[:, None], y, z, fx)


def generate(spec) -> Dataset:
    if isinstance(spec, LowDimSpec):
        return gen_low_dim(spec)
    if isinstance(spec, MendelianSpec):
        return gen_mendelian(spec)
    raise InputError(f"unsupported generator spec {type(spec).__name__}")


@dataclass(frozen=True)
class YTransform:
    """Affine outcome transform ``(y - mean) / scale`` fitted on a training split."""

    mean: float
    scale: float

    def apply(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.scale

    def invert(self, y):
        return np.asarray(y, dtype=float) * self.scale + self.mean


def standardize_y(train: Dataset, others: Sequence[Dataset] = ()):
    """Standardize ``y`` (and ``f_star``) of every dataset with the training statistics.

    Returns ``(train, others, transform)``.
    """
    if train.n < 2:
        raise InputError("standardization needs at least two training rows")
    mean = float(np.mean(train.y))
    scale = float(np.std(train.y))
    if not scale > 0.0:
        raise InputError("training outcomes have zero variance")
    t = YTransform(mean, scale)

    def _map(d: Dataset) -> Dataset:
        fs = None if d.f_star is None else t.apply(d.f_star)
        return d.with_y(t.apply(d.y), fs)

    return _map(train), [_map(d) for d in others], t


def write_csv(data: Dataset, path) -> None:
    """Columns ``x_0.., y, z_0.., f_star`` with 17 significant digits."""
    cols = [f"x_{i}" for i in range(data.x.shape[1])] + ["y"] + [f"z_{i}" for i in range(data.z.shape[1])]
    parts = [data.x, data.y[:, None], data.z]
    if data.f_star is not None:
        cols.append("f_star")
        parts.append(data.f_star[:, None])
    np.savetxt(path, np.hstack(parts), fmt="%.17g", delimiter=",", header=",".join(cols), comments="")


def read_csv(path) -> Dataset:
    """Read a file written by :func:`write_csv`; ``f_star`` is optional."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if "y" not in header:
        raise InputError(f"{path}: header has no 'y' column")
    values = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if values.shape[1] != len(header):
        raise InputError(f"{path}: {values.shape[1]} columns but {len(header)} header names")
    xs = [i for i, h in enumerate(header) if h.startswith("x_")]
    zs = [i for i, h in enumerate(header) if h.startswith("z_")]
    if not xs or not zs:
        raise InputError(f"{path}: need at least one x_ and one z_ column")
    fs = values[:, header.index("f_star")] if "f_star" in header else None
    return Dataset(values[:, xs], values[:, header.index("y")], values[:, zs], fs)
