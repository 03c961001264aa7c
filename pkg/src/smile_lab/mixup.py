"""The mix operator, Beta coefficient sampling, and batch pairing.

Convention: mix(u, v, lam) = (1 - lam) * u + lam * v, so lam = 0 returns u.
"""

from __future__ import annotations

import numpy as np


def mix(u: np.ndarray, v: np.ndarray, lam: float) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"mix shape mismatch: {u.shape} vs {v.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda out of range: {lam}")
    if lam == 0.0:
        return u.copy()
    if lam == 1.0:
        return v.copy()
    return (1.0 - lam) * u + lam * v


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """lam ~ Beta(alpha, alpha) via two Gamma draws."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    g1 = rng.gamma(alpha, 1.0)
    g2 = rng.gamma(alpha, 1.0)
    return float(g1 / (g1 + g2))


def pair_batch(batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Partner index j for each batch element i; a uniform permutation,
    self-pairs permitted."""
    if batch_size < 1:
        raise ValueError("batch must be non-empty")
    return rng.permutation(batch_size)
