"""Interpolation-loss diagnostics: how linear is a model between samples?

The estimator mixes a random pair at two anchor coefficients d1, d2 and at a
point lam-way between them, then measures how far the model output at the
in-between input falls from the straight line between the anchor outputs,
normalized by the anchor-output distance.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from . import model
from .mixup import mix

TRAJECTORY_COEFFICIENTS = (0.6, 0.7, 0.8, 0.9, 1.0)


class DegeneratePair(ValueError):
    """Anchor outputs are (numerically) identical; the ratio is undefined."""


class AllDrawsDegenerate(RuntimeError):
    pass


@dataclass
class ILConfig:
    layer: str = "label"                 # "label" (logits) or "feature"
    delta_low: float = 0.5
    delta_high: float = 1.0
    n_pairs: int = 100
    n_delta_draws: int = 4
    n_lambda_draws: int = 4
    denom_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.delta_low <= self.delta_high <= 1.0):
            raise ValueError("delta support must lie within [0, 1]")
        if min(self.n_pairs, self.n_delta_draws, self.n_lambda_draws) < 1:
            raise ValueError("draw counts must be >= 1")
        if self.layer not in ("label", "feature"):
            raise ValueError(f"unknown layer {self.layer!r}")


@dataclass
class ILReport:
    mean: float
    std: float
    n_effective: int
    n_degenerate: int
    config: ILConfig

    def to_json(self) -> str:
        payload = {
            "mean": self.mean,
            "std": self.std,
            "n_effective": self.n_effective,
            "n_degenerate": self.n_degenerate,
            "config": self.config.__dict__,
        }
        return json.dumps(payload, indent=2)


def normalized_interp_distance(y_it: np.ndarray, y1: np.ndarray,
                               y2: np.ndarray, lam: float,
                               epsilon: float = 1e-8) -> float:
    """Euclidean ||y_it - (lam*y1 + (1-lam)*y2)|| / ||y1 - y2||."""
    y_it, y1, y2 = (np.asarray(a, dtype=np.float64) for a in (y_it, y1, y2))
    if not (y_it.shape == y1.shape == y2.shape):
        raise ValueError("shape mismatch")
    denom = float(np.linalg.norm(y1 - y2))
    if denom < epsilon:
        raise DegeneratePair("anchor outputs too close")
    numer = float(np.linalg.norm(y_it - (lam * y1 + (1.0 - lam) * y2)))
    return numer / denom


def estimate_IL(model_fn: Callable[[np.ndarray], np.ndarray],
                dataset, config: ILConfig,
                rng: np.random.Generator | None = None) -> ILReport:
    """Monte-Carlo estimate of the interpolation loss.

    ``model_fn`` maps a batch of inputs to a batch of output vectors (logits
    or features, per config.layer). ``rng`` may be any object exposing
    ``integers`` and ``uniform`` (a stub enables exhaustive enumeration).
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least two samples")
    ratios: List[float] = []
    n_degenerate = 0
    for _ in range(config.n_pairs):
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n))
        x_a, x_b = dataset.inputs[i], dataset.inputs[j]
        for _ in range(config.n_delta_draws):
            d1 = float(rng.uniform(config.delta_low, config.delta_high))
            d2 = float(rng.uniform(config.delta_low, config.delta_high))
            lams = [float(rng.uniform(0.0, 1.0))
                    for _ in range(config.n_lambda_draws)]
            mids = [lam * d1 + (1.0 - lam) * d2 for lam in lams]
            batch = np.stack([mix(x_a, x_b, d1), mix(x_a, x_b, d2)]
                             + [mix(x_a, x_b, m) for m in mids])
            outs = model_fn(batch)
            y1, y2 = outs[0], outs[1]
            for idx, lam in enumerate(lams):
                try:
                    ratios.append(normalized_interp_distance(
                        outs[2 + idx], y1, y2, lam, config.denom_epsilon))
                except DegeneratePair:
                    n_degenerate += 1
    if not ratios:
        raise AllDrawsDegenerate("every sampled pair had coincident outputs")
    arr = np.array(ratios)
    return ILReport(float(arr.mean()), float(arr.std()), len(arr),
                    n_degenerate, config)


def model_output_fn(weights: model.ModelWeights, layer: str):
    """Batch->outputs closure for estimate_IL over trained weights."""
    if layer == "feature":
        return lambda x: model.feature_extract(x, weights)
    if weights.has_target_head:
        return lambda x: model.target_logits(x, weights)
    return lambda x: model.source_logits(x, weights)


def pca_2d(points: np.ndarray):
    """Mean-centered projection onto the top-2 principal directions.

    Sign convention: first nonzero loading of each component is positive.
    Returns (projected (n, 2), explained variance fractions (2,)).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2 or points.shape[1] < 2:
        raise ValueError("need at least 2 points of dimension >= 2")
    centered = points - points.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    for r in range(comps.shape[0]):
        nonzero = np.flatnonzero(np.abs(comps[r]) > 1e-12)
        if len(nonzero) and comps[r, nonzero[0]] < 0:
            comps[r] = -comps[r]
    eigvals = s ** 2 / (points.shape[0] - 1)
    total_var = centered.var(axis=0, ddof=1).sum()
    explained = (eigvals[:2] / total_var if total_var > 0
                 else np.zeros(min(2, len(eigvals))))
    if len(explained) < 2:
        explained = np.pad(explained, (0, 2 - len(explained)))
    return centered @ comps.T, explained[:2]


@dataclass
class TrajectoryPoint:
    pair_id: int
    lam: float
    x: float
    y: float


def feature_interp_trajectory(
        feature_fn: Callable[[np.ndarray], np.ndarray],
        image_pairs: Sequence[tuple],
        coefficients: Sequence[float] = TRAJECTORY_COEFFICIENTS):
    """Feature-space trajectories of mixed inputs, PCA-projected to 2-D.

    Returns (rows, explained variance fractions); one row per
    (pair, coefficient)."""
    if len(image_pairs) < 1:
        raise ValueError("need at least one image pair")
    batch = np.stack([mix(a, b, lam)
                      for a, b in image_pairs for lam in coefficients])
    feats = feature_fn(batch)
    projected, explained = pca_2d(feats)
    rows = []
    idx = 0
    for pair_id in range(len(image_pairs)):
        for lam in coefficients:
            rows.append(TrajectoryPoint(pair_id, float(lam),
                                        float(projected[idx, 0]),
                                        float(projected[idx, 1])))
            idx += 1
    return rows, explained


def write_trajectory_csv(rows: List[TrajectoryPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "lambda", "x", "y"])
        for r in rows:
            writer.writerow([r.pair_id, r.lam, repr(r.x), repr(r.y)])
