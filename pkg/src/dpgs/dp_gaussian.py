"""Per-cluster private Gaussian estimation by clipping and noising.

Mean: deviations from the (already private) cluster center are clipped to
``mean_clip_radius`` and summed; the sum goes through the Gaussian mechanism,
the count through the Laplace mechanism, split ``sum_count_ratio : 1``.

Covariance: deviations from the private mean are clipped to ``clip_radius``.
The diagonal model releases the d-vector of squared-deviation sums, the full
model the d x d outer-product sum; both have l2 (Frobenius) sensitivity
``clip_radius ** 2``. The noisy count from the mean release is reused as the
denominator, so counts are paid for once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core.errors import ConfigurationError, ContractError
from .core.types import COVARIANCE_MODELS, EmbeddingDataset, PrivacyBudget
from .dp_kmeans import clip_rows
from .mechanisms import laplace_mechanism, split_budget, split_gaussian_mechanism


@dataclass(frozen=True)
class EstimatorConfig:
    """Clip radii and covariance model for the per-cluster estimators.

    ``clip_radius`` bounds deviations for covariance estimation (the radius
    tuned over {2, 4, 6, 8, 10}); ``mean_clip_radius`` defaults to it.
    """

    clip_radius: float = 6.0
    covariance_model: str = "diagonal"
    variance_floor: float = 1e-6
    mean_clip_radius: Optional[float] = None
    sum_count_ratio: float = 4.0
    min_count: float = 1.0

    def __post_init__(self):
        if not self.clip_radius > 0:
            raise ConfigurationError("clip_radius must be positive")
        if self.mean_clip_radius is not None and not self.mean_clip_radius > 0:
            raise ConfigurationError("mean_clip_radius must be positive")
        if self.covariance_model not in COVARIANCE_MODELS:
            raise ConfigurationError(f"covariance_model must be one of {COVARIANCE_MODELS}")
        if not self.variance_floor > 0:
            raise ConfigurationError("variance_floor must be positive")
        if not self.sum_count_ratio > 0:
            raise ConfigurationError("sum_count_ratio must be positive")
        if not self.min_count >= 1:
            raise ConfigurationError("min_count must be at least 1")

    @property
    def mean_radius(self) -> float:
        return self.clip_radius if self.mean_clip_radius is None else self.mean_clip_radius


class MeanEstimate(NamedTuple):
    mean: np.ndarray
    noisy_count: float
    degenerate: bool


@dataclass(frozen=True, eq=False)
class GaussianEstimate:
    mean: np.ndarray
    covariance: np.ndarray
    noisy_count: float
    degenerate: bool = False


def _rows(cluster):
    if isinstance(cluster, EmbeddingDataset):
        return cluster.data
    rows = np.asarray(cluster, dtype=np.float64)
    if rows.ndim != 2:
        raise ContractError("cluster must be an n x d matrix")
    return rows


def dp_mean(cluster, center, cfg: EstimatorConfig, budget: PrivacyBudget, rng) -> MeanEstimate:
    """Private mean of one cluster.

    Returns ``center`` flagged degenerate when the noisy count is below
    ``cfg.min_count`` (in non-private mode: when the cluster is empty).
    """
    X = _rows(cluster)
    center = np.asarray(center, dtype=np.float64)
    if center.shape != (X.shape[1],):
        raise ContractError(f"center has shape {center.shape}, expected ({X.shape[1]},)")
    R = cfg.mean_radius
    sum_budget, count_budget = split_budget(budget, [cfg.sum_count_ratio, 1.0])
    deviations = clip_rows(X - center, R)
    noisy_sum = split_gaussian_mechanism(deviations.sum(axis=0), R, sum_budget, rng)
    noisy_count = float(laplace_mechanism([float(X.shape[0])], 1.0, count_budget, rng)[0])
    if X.shape[0] == 0 and not budget.is_private:
        return MeanEstimate(center.copy(), 0.0, True)
    if noisy_count < cfg.min_count:
        return MeanEstimate(center.copy(), noisy_count, True)
    return MeanEstimate(center + noisy_sum / max(noisy_count, 1.0), noisy_count, False)


def project_psd(matrix, floor) -> np.ndarray:
    """Symmetrize and clamp eigenvalues from below at ``floor``."""
    sym = 0.5 * (matrix + matrix.T)
    values, vectors = np.linalg.eigh(sym)
    out = (vectors * np.maximum(values, floor)) @ vectors.T
    return 0.5 * (out + out.T)


def dp_covariance(cluster, mean_estimate, cfg: EstimatorConfig, budget: PrivacyBudget, rng,
                  noisy_count=None):
    """Private covariance: a variance vector (diagonal) or a matrix (full).

    ``noisy_count`` should be the count already released by :func:`dp_mean`;
    when omitted a fresh count is released from one part in
    ``sum_count_ratio + 1`` of ``budget``.
    """
    X = _rows(cluster)
    d = X.shape[1]
    mean_estimate = np.asarray(mean_estimate, dtype=np.float64)
    if mean_estimate.shape != (d,):
        raise ContractError(f"mean has shape {mean_estimate.shape}, expected ({d},)")
    R = cfg.clip_radius
    stat_budget = budget
    if noisy_count is None:
        stat_budget, count_budget = split_budget(budget, [cfg.sum_count_ratio, 1.0])
        noisy_count = float(laplace_mechanism([float(X.shape[0])], 1.0, count_budget, rng)[0])
    deviations = clip_rows(X - mean_estimate, R)
    empty = X.shape[0] == 0 and not budget.is_private
    denominator = max(float(noisy_count), 1.0)
    if cfg.covariance_model == "diagonal":
        noisy = split_gaussian_mechanism((deviations ** 2).sum(axis=0), R ** 2, stat_budget, rng)
        if empty or noisy_count < cfg.min_count:
            return np.full(d, cfg.variance_floor)
        return np.maximum(noisy / denominator, cfg.variance_floor)
    noisy = split_gaussian_mechanism(deviations.T @ deviations, R ** 2, stat_budget, rng)
    if empty or noisy_count < cfg.min_count:
        return np.eye(d) * cfg.variance_floor
    return project_psd(noisy / denominator, cfg.variance_floor)


def dp_gaussian(cluster, center, cfg: EstimatorConfig, mean_budget: PrivacyBudget,
                cov_budget: PrivacyBudget, rng) -> GaussianEstimate:
    """dp_mean followed by dp_covariance sharing one noisy count."""
    m = dp_mean(cluster, center, cfg, mean_budget, rng)
    cov = dp_covariance(cluster, m.mean, cfg, cov_budget, rng, noisy_count=m.noisy_count)
    return GaussianEstimate(m.mean, cov, m.noisy_count, m.degenerate)


def dp_weights(noisy_counts) -> np.ndarray:
    """Clamp negative counts to zero and normalize; uniform if nothing survives."""
    counts = np.maximum(np.asarray(noisy_counts, dtype=np.float64).reshape(-1), 0.0)
    if counts.size == 0:
        raise ContractError("need at least one count")
    total = counts.sum()
    if total <= 0:
        return np.full(counts.size, 1.0 / counts.size)
    weights = counts / total
    return weights / weights.sum()
