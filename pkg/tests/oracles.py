"""Independent reference computations used by the tests.

Each oracle avoids the code path it checks: dense inverses and
pseudo-inverses instead of factorizations, explicit double loops instead of
quadratic forms, and refits instead of analytical shortcuts.
"""

import numpy as np
from scipy import optimize


def random_instance(rng, n, d=1, dz=2):
    x = rng.normal(size=(n, d))
    z = rng.normal(size=(n, dz))
    y = np.sin(x[:, 0]) + 0.3 * rng.normal(size=n)
    return x, y, z


def gauss_gram(a, b, sigma):
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i, j] = np.exp(-np.sum((a[i] - b[j]) ** 2) / (2 * sigma * sigma))
    return out


def double_sum_risk(r, K, u_stat=False):
    n = len(r)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if u_stat and i == j:
                continue
            total += r[i] * r[j] * K[i, j]
    return total / (n * (n - 1) if u_stat else n * n)


def objective(K, L, y, lam, alpha):
    n = len(y)
    r = y - L @ alpha
    return r @ K @ r / n**2 + lam * alpha @ L @ alpha


def alpha_pinv(K, L, y, lam):
    """Minimizer from the full normal equations ``(L W L + lam L) a = L W y`` by pseudo-inverse."""
    W = K / len(y) ** 2
    return np.linalg.pinv(L @ W @ L + lam * L) @ (L @ W @ y)


def alpha_multistart(K, L, y, lam, restarts, rng):
    """Best objective found by BFGS from ``restarts`` random starting points."""
    n = len(y)
    W = K / n**2

    def f(a):
        return objective(K, L, y, lam, a)

    def g(a):
        r = y - L @ a
        return -2 * L @ W @ r + 2 * lam * L @ a

    best = np.inf
    for _ in range(restarts):
        res = optimize.minimize(f, rng.normal(size=n), jac=g, method="BFGS", options={"gtol": 1e-12, "maxiter": 5000})
        best = min(best, res.fun)
    return best


def gp_mean_dense(K, L, y, delta):
    """Posterior mean ``delta L (delta K L + I)^-1 K y`` with a dense solve."""
    n = len(y)
    return delta * L @ np.linalg.solve(delta * K @ L + np.eye(n), K @ y)


def gp_cov_dense(K, L, delta):
    """``(K + (delta L)^-1)^-1`` in the form ``delta L (delta K L + I)^-1`` that avoids inverting ``L``."""
    return delta * L @ np.linalg.inv(delta * K @ L + np.eye(len(L)))


def lmocv_refit(K, L, y, delta, folds):
    """Leave-out CV by refitting with each fold's likelihood factor removed.

    The fold's own block of the instrument Gram matrix is zeroed, the
    posterior mean is recomputed densely, and its value at the fold is
    scored against ``y`` with the fold's Gram block.
    """
    total = 0.0
    for f in folds:
        Kb = K.copy()
        Kb[np.ix_(f, f)] = 0.0
        b = gp_mean_dense(Kb, L, y, delta)[f]
        r = b - y[f]
        total += r @ K[np.ix_(f, f)] @ r
    return total


def lmocv_naive(K, L, y, delta, folds):
    """Leave-out CV by refitting on the remaining points only (drops cross pairs)."""
    n = len(y)
    total = 0.0
    for f in folds:
        keep = np.setdiff1d(np.arange(n), f)
        Kt, Lt = K[np.ix_(keep, keep)], L[np.ix_(keep, keep)]
        c_t = gp_mean_dense(Kt, Lt, y[keep], delta)
        # GP conditional of the fold given the fit at the retained points
        b = L[np.ix_(f, keep)] @ np.linalg.solve(Lt, c_t)
        r = b - y[f]
        total += r @ K[np.ix_(f, f)] @ r
    return total


def mlp_forward_loop(weights, biases, x, slope=0.01):
    """Forward pass one sample at a time with explicit loops."""
    out = []
    for row in np.atleast_2d(x):
        h = list(row)
        for li, (W, b) in enumerate(zip(weights, biases)):
            a = [sum(h[i] * W[i, j] for i in range(W.shape[0])) + b[j] for j in range(W.shape[1])]
            h = a if li == len(weights) - 1 else [v if v > 0 else slope * v for v in a]
        out.append(h[0])
    return np.array(out)
