"""Independent reference implementations used only by the tests.

These are deliberately naive: direct recursion, explicit loops and plain
dense solves, sharing no code with the package.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


def lev_recursive(a, b) -> int:
    a = tuple(t.strip().lower() for t in a)
    b = tuple(t.strip().lower() for t in b)

    @lru_cache(maxsize=None)
    def d(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def partitions(n: int):
    """All contiguous partitions of ``[0, n)`` as lists of (start, stop)."""
    for k in range(n):
        for cuts in itertools.combinations(range(1, n), k):
            bounds = (0, *cuts, n)
            yield list(zip(bounds, bounds[1:]))


def verify_selections(n: int, r: int):
    """Every set of disjoint spans of length <= r inside ``[0, n)``."""

    def rec(pos):
        if pos >= n:
            yield ()
            return
        yield from rec(pos + 1)
        for length in range(1, r + 1):
            if pos + length <= n:
                for rest in rec(pos + length):
                    yield ((pos, pos + length),) + rest

    yield from rec(0)


def outcomes(util, cost, n: int, r: int):
    """(utility, cost, spans) of every selection; ``util[i][L-1]`` indexing."""
    out = []
    for spans in verify_selections(n, r):
        u = sum(util[a][b - a - 1] for a, b in spans)
        c = sum(cost[a][b - a - 1] for a, b in spans)
        out.append((u, c, spans))
    return out


def constrained_optimum(util, cost, n: int, r: int, budget: float) -> float:
    return max(u for u, c, _ in outcomes(util, cost, n, r) if c <= budget + 1e-9)


def penalized_optimum(util, cost, n: int, r: int, lam: float) -> float:
    return max(u - lam * c for u, c, _ in outcomes(util, cost, n, r))


def standardize(X: np.ndarray):
    mu = [sum(col) / len(col) for col in X.T]
    sd = []
    for k, col in enumerate(X.T):
        s = math.sqrt(sum((v - mu[k]) ** 2 for v in col) / len(col))
        sd.append(s if s >= 1e-12 else 1.0)
    return np.array(mu), np.array(sd)


def gp_direct(X, times, Xq, prior, signal_var, noise_var, lengthscale=1.0):
    """Posterior mean and variance of log time by a dense solve with looped kernels."""
    X = np.asarray(X, float)
    Xq = np.asarray(Xq, float)
    mu, sd = standardize(X)
    sd = sd * lengthscale
    Z = (X - mu) / sd
    Zq = (Xq - mu) / sd
    n = len(Z)

    def k(u, v):
        return signal_var * math.exp(-0.5 * sum((ui - vi) ** 2 for ui, vi in zip(u, v)))

    K = np.array([[k(Z[i], Z[j]) + (noise_var if i == j else 0.0) for j in range(n)] for i in range(n)])
    y = np.log(np.asarray(times, float)) - prior(X)
    Ks = np.array([[k(zq, Z[j]) for j in range(n)] for zq in Zq])
    mean = prior(Xq) + Ks @ np.linalg.solve(K, y)
    var = signal_var - np.einsum("ij,ji->i", Ks, np.linalg.solve(K, Ks.T))
    return mean, var


def overhead_prior(X) -> np.ndarray:
    return np.log(2.0 + np.asarray(X, float)[:, 0])
