"""MMR-IV with a fully connected network trained on the V-statistic objective.

The objective ``r^T W r + lam * ||theta||^2`` couples every pair of samples
through ``W``, so training is full batch.  Backpropagation is done by hand:
the output cotangent is ``-2 W r`` and the hidden layers use leaky ReLU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import DivergenceError, InputError
from .kernels import KernelSpec
from .risk import Dataset, v_risk

PAPER_LR_GRID = tuple(10.0 ** e for e in range(-12, -5))
PAPER_LAMBDA_GRID = (5e-5, 1e-4, 2e-4)
WIDE_LR_GRID = (1e-3, 1e-2, 5e-2)
DEFAULT_ARCH = (100, 100)


@dataclass
class MlpParams:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    slope: float = 0.01
    history: List[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InputError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise InputError(f"layer {i}: weight {W.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != W.shape[0]:
                raise InputError(f"layer {i} input size {W.shape[0]} != previous output {self.weights[i - 1].shape[1]}")
        if self.weights[-1].shape[1] != 1:
            raise InputError("the output layer must have width 1")

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def with_flat(self, theta: np.ndarray) -> "MlpParams":
        ws, bs, pos = [], [], 0
        for W, b in zip(self.weights, self.biases):
            ws.append(theta[pos:pos + W.size].reshape(W.shape))
            pos += W.size
            bs.append(theta[pos:pos + b.size].copy())
            pos += b.size
        return MlpParams([w.copy() for w in ws], bs, self.slope)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.slope, list(self.history))

    def sq_norm(self) -> float:
        return float(sum(np.sum(W * W) + np.sum(b * b) for W, b in zip(self.weights, self.biases)))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 1000
    lam: float = 1e-4
    seed: int = 0
    optimizer: str = "momentum"  # or "gd"
    momentum: float = 0.9

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InputError("learning rate must be positive")
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")
        if self.lam < 0:
            raise InputError("lambda must be non-negative")
        if self.optimizer not in ("gd", "momentum"):
            raise InputError(f"unknown optimizer {self.optimizer!r}")


def init_params(layer_sizes: Sequence[int], seed=0, slope: float = 0.01) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MlpParams(ws, bs, slope)


def _leaky(a, slope):
    return np.where(a > 0, a, slope * a)


def _as_batch(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    if x.shape[1] != params.weights[0].shape[0]:
        raise InputError(f"network expects {params.weights[0].shape[0]} inputs, got {x.shape[1]}")
    return x


def _forward_cache(params: MlpParams, x):
    h = x
    pre = []
    acts = [h]
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ W + b
        pre.append(a)
        h = a if i == last else _leaky(a, params.slope)
        acts.append(h)
    return pre, acts


def forward(params: MlpParams, x) -> np.ndarray:
    x = _as_batch(params, x)
    _, acts = _forward_cache(params, x)
    return acts[-1][:, 0]


def objective_and_gradient(params: MlpParams, x, y, W, lam: float) -> Tuple[float, MlpParams]:
    """Objective and its gradient, returned with the same layout as ``params``."""
    x = _as_batch(params, x)
    y = np.asarray(y, dtype=float).reshape(-1)
    W = np.asarray(W, dtype=float)
    if W.shape != (y.shape[0], y.shape[0]) or x.shape[0] != y.shape[0]:
        raise InputError("weight matrix, inputs and outputs disagree in size")
    # overflow shows up as a non-finite objective, which is reported below
    with np.errstate(over="ignore", invalid="ignore"):
        pre, acts = _forward_cache(params, x)
        r = y - acts[-1][:, 0]
        Wr = W @ r
        obj = float(r @ Wr) + lam * params.sq_norm()
    if not np.isfinite(obj):
        raise DivergenceError("objective is not finite", last_state=None)

    g = (-2.0 * Wr)[:, None]
    gws: List[np.ndarray] = [None] * len(params.weights)
    gbs: List[np.ndarray] = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gws[i] = acts[i].T @ g + 2.0 * lam * params.weights[i]
        gbs[i] = g.sum(axis=0) + 2.0 * lam * params.biases[i]
        if i:
            g = (g @ params.weights[i].T) * np.where(pre[i - 1] > 0, 1.0, params.slope)
    return obj, MlpParams(gws, gbs, params.slope)


def train(
    data: Dataset,
    kernel_k: Optional[KernelSpec] = None,
    arch: Sequence[int] = DEFAULT_ARCH,
    config: TrainConfig = TrainConfig(),
    W: Optional[np.ndarray] = None,
) -> MlpParams:
    """Full-batch descent; returns the parameters of the lowest-objective epoch.

    ``history`` on the result holds the objective at every epoch.  The
    instrument kernel defaults to the median-scaled three-Gaussian sum.
    """
    if W is None:
        kernel_k = kernel_k or kernels.sum_gaussians_from_median(data.z)
        W = kernels.gram(kernel_k, data.z) / float(data.n ** 2)
    params = init_params([data.x.shape[1], *arch, 1], config.seed)
    velocity = [np.zeros_like(a) for a in params.weights + params.biases]
    best, best_obj = params.copy(), np.inf
    history: List[float] = []
    prev = None
    for epoch in range(config.epochs):
        try:
            obj, grad = objective_and_gradient(params, data.x, data.y, W, config.lam)
        except DivergenceError:
            raise DivergenceError(f"objective became non-finite at epoch {epoch}", last_state=best) from None
        if prev is not None and obj > 10.0 * prev:
            raise DivergenceError(f"objective jumped from {prev:.3e} to {obj:.3e} at epoch {epoch}", last_state=best)
        history.append(obj)
        if obj < best_obj:
            best, best_obj = params.copy(), obj
        prev = obj
        grads = grad.weights + grad.biases
        values = params.weights + params.biases
        for j, (v, gr) in enumerate(zip(values, grads)):
            if config.optimizer == "momentum":
                velocity[j] = config.momentum * velocity[j] - config.learning_rate * gr
                v += velocity[j]
            else:
                v -= config.learning_rate * gr
    # the final update is scored too
    obj, _ = objective_and_gradient(params, data.x, data.y, W, config.lam)
    if np.isfinite(obj) and obj < best_obj:
        best, best_obj = params.copy(), obj
    history.append(obj)
    best.history = history
    return best


def heldout_risk(params: MlpParams, data: Dataset, kernel_k: Optional[KernelSpec] = None) -> float:
    kernel_k = kernel_k or kernels.sum_gaussians_from_median(data.z)
    return v_risk(kernel_k, data.z, data.y - forward(params, data.x))


def select_nn(
    fold_a: Dataset,
    fold_b: Dataset,
    arch: Sequence[int] = DEFAULT_ARCH,
    lr_grid: Sequence[float] = WIDE_LR_GRID,
    lam_grid: Sequence[float] = PAPER_LAMBDA_GRID,
    epochs: int = 1000,
    seed: int = 0,
    optimizer: str = "momentum",
):
    """Two-fold CV on held-out V-statistic risk; returns ``(best_config, table)``.

    Each grid point trains on one fold and scores on the other, both ways.
    """
    Wa = kernels.gram(kernels.sum_gaussians_from_median(fold_a.z), fold_a.z) / float(fold_a.n ** 2)
    Wb = kernels.gram(kernels.sum_gaussians_from_median(fold_b.z), fold_b.z) / float(fold_b.n ** 2)
    table, best = [], None
    for lr in lr_grid:
        for lam in lam_grid:
            cfg = TrainConfig(lr, epochs, lam, seed, optimizer)
            try:
                pa = train(fold_a, arch=arch, config=cfg, W=Wa)
                pb = train(fold_b, arch=arch, config=cfg, W=Wb)
                r_b = fold_b.y - forward(pa, fold_b.x)
                r_a = fold_a.y - forward(pb, fold_a.x)
                score = 0.5 * (float(r_b @ Wb @ r_b) + float(r_a @ Wa @ r_a))
                status = "OK"
            except DivergenceError:
                score, status = float("inf"), "DIVERGED"
            table.append({"lr": lr, "lambda": lam, "cv_error": score, "status": status})
            if best is None or score < best[0]:
                best = (score, cfg)
    return best[1], table


def save_mlp(params: MlpParams, path, y_transform=None, config: Optional[TrainConfig] = None) -> None:
    """Write network parameters as ``.npz`` with arrays ``w<i>``, ``b<i>`` and a JSON ``meta`` string."""
    import json

    meta = {"kind": "mlp", "layers": len(params.weights), "slope": params.slope}
    if config is not None:
        meta["train"] = {"lr": config.learning_rate, "epochs": config.epochs, "lambda": config.lam, "seed": config.seed}
    if y_transform is not None:
        meta["y_transform"] = {"mean": y_transform.mean, "scale": y_transform.scale}
    arrays = {f"w{i}": W for i, W in enumerate(params.weights)}
    arrays.update({f"b{i}": b for i, b in enumerate(params.biases)})
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_mlp(path):
    """Inverse of :func:`save_mlp`; returns ``(params, y_transform or None)``."""
    import json

    from .datagen import YTransform

    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["meta"]))
        k = meta["layers"]
        params = MlpParams([npz[f"w{i}"].copy() for i in range(k)], [npz[f"b{i}"].copy() for i in range(k)], meta["slope"])
    yt = meta.get("y_transform")
    return params, (YTransform(yt["mean"], yt["scale"]) if yt else None)
