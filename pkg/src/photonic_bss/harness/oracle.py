"""Reference two-channel separation used to cross-check the engine.

PCA is the eigen-decomposition of the sample covariance.  ICA is an
exhaustive search over the rotation angle of the whitened data, with the
kurtosis of every projection computed from the fourth-order moments
``E[z1^k z2^(4-k)]`` instead of from the samples.
"""

from __future__ import annotations

import itertools
from math import comb

import numpy as np


def oracle_whitening(X) -> np.ndarray:
    """Rows of ``V`` satisfy ``cov(V x) = I``; ordered by decreasing variance."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=1, keepdims=True)
    C = Xc @ Xc.T / Xc.shape[1]
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1]
    return vecs[:, order].T / np.sqrt(vals[order])[:, None]


def projection_kurtosis(Z, theta) -> np.ndarray:
    """``|E[y^4]/E[y^2]^2 - 3|`` for ``y = cos(t) z1 + sin(t) z2`` at every ``t``."""
    z1, z2 = Z
    c, s = np.cos(theta), np.sin(theta)
    m4 = sum(comb(4, k) * np.mean(z1 ** k * z2 ** (4 - k)) * c ** k * s ** (4 - k)
             for k in range(5))
    m2 = (np.mean(z1 * z1) * c * c + 2 * np.mean(z1 * z2) * c * s + np.mean(z2 * z2) * s * s)
    return np.abs(m4 / m2 ** 2 - 3.0)


def oracle_demix(X, grid_points: int = 200_000) -> np.ndarray:
    """Box-scaled demixing rows for two mixtures, most non-Gaussian first."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] != 2:
        raise ValueError("the oracle handles exactly two mixtures")
    V = oracle_whitening(X)
    Z = V @ (X - X.mean(axis=1, keepdims=True))
    theta = np.linspace(0.0, np.pi, grid_points, endpoint=False)
    best = theta[np.argmax(projection_kurtosis(Z, theta))]
    rows = []
    for t in (best, best + np.pi / 2):
        w = np.array([np.cos(t), np.sin(t)]) @ V
        rows.append(w / np.max(np.abs(w)))
    return np.array(rows)


def row_deviation(A, B) -> float:
    """Max-norm distance between row sets, minimized over row order and signs."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    best = np.inf
    for perm in itertools.permutations(range(len(B))):
        dev = max(min(np.max(np.abs(a - B[p])), np.max(np.abs(a + B[p])))
                  for a, p in zip(A, perm))
        best = min(best, dev)
    return float(best)
