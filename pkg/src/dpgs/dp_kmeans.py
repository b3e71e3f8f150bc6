"""Private k-means by noisy Lloyd iterations.

Points are clipped to an l2 ball of radius ``clip_radius`` about the origin.
Each iteration releases per-cluster coordinate sums through the Gaussian
mechanism (l2 sensitivity ``clip_radius``) and per-cluster counts through the
Laplace mechanism (l1 sensitivity 1). The cluster budget is divided evenly
over iterations and, within an iteration, between sums and counts at
``sum_count_ratio : 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core.errors import ConfigurationError, ContractError
from .core.types import ClusteringResult, EmbeddingDataset, PrivacyBudget
from .mechanisms import laplace_mechanism, split_budget, split_gaussian_mechanism, split_gaussian_sigma

INIT_METHODS = ("overseed", "random-from-ball", "noisy-sample")
RESEED_METHODS = ("split-largest", "uniform")

# fraction of the ball radius used to offset a center split off the largest cluster
_SPLIT_OFFSET = 0.05


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    clip_radius: float
    lloyd_iterations: int = 5
    init: str = "overseed"
    sum_count_ratio: float = 4.0
    reseed: str = "split-largest"
    init_fraction: float = 0.2
    init_candidates: int = 0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigurationError(f"k must be a positive integer, got {self.k}")
        if not self.clip_radius > 0:
            raise ConfigurationError(f"clip_radius must be positive, got {self.clip_radius}")
        if int(self.lloyd_iterations) != self.lloyd_iterations or self.lloyd_iterations < 1:
            raise ConfigurationError("lloyd_iterations must be a positive integer")
        if self.init not in INIT_METHODS:
            raise ConfigurationError(f"init must be one of {INIT_METHODS}")
        if self.reseed not in RESEED_METHODS:
            raise ConfigurationError(f"reseed must be one of {RESEED_METHODS}")
        if not self.sum_count_ratio > 0:
            raise ConfigurationError("sum_count_ratio must be positive")
        if not 0 < self.init_fraction < 1:
            raise ConfigurationError("init_fraction must lie in (0, 1)")
        if int(self.init_candidates) != self.init_candidates or self.init_candidates < 0:
            raise ConfigurationError("init_candidates must be a nonnegative integer")

    @property
    def candidate_count(self) -> int:
        return self.init_candidates or max(64, 8 * self.k)


@dataclass(frozen=True)
class ApproxGuarantee:
    """A (zeta, eta)-approximate k-means solver: cost <= zeta * OPT + eta."""

    zeta: float = 1.0
    eta: float = 0.0

    def __post_init__(self):
        if self.zeta < 1 or self.eta < 0:
            raise ContractError("need zeta >= 1 and eta >= 0")

    def holds(self, cost, opt) -> bool:
        return cost <= self.zeta * opt + self.eta


def clip_rows(X, radius) -> np.ndarray:
    """Scale each row by ``min(1, radius / ||row||)``."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    factor = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    return X * factor[:, None]


def sample_ball(count, d, radius, rng) -> np.ndarray:
    """Uniform points in the d-dimensional l2 ball."""
    direction = rng.normal(size=(count, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * (radius * rng.random(count) ** (1.0 / d))[:, None]


def assign_and_count(data, centers):
    """Nearest-center assignment (lowest index wins ties) and exact counts."""
    data = data.data if isinstance(data, EmbeddingDataset) else np.asarray(data, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 1 or centers.shape[1] != data.shape[1]:
        raise ContractError(f"centers of shape {centers.shape} do not fit data of dim {data.shape[1]}")
    assignment = np.empty(data.shape[0], dtype=np.int64)
    for start in range(0, data.shape[0], 8192):
        block = data[start:start + 8192]
        assignment[start:start + 8192] = np.argmin(cdist(block, centers, "sqeuclidean"), axis=1)
    return assignment, np.bincount(assignment, minlength=centers.shape[0])


def cluster_sums(data, assignment, k) -> np.ndarray:
    sums = np.zeros((k, data.shape[1]))
    for j in range(k):
        sums[j] = data[assignment == j].sum(axis=0)
    return sums


def kmeans_cost(data, centers) -> float:
    """Sum of squared distances to the nearest center."""
    data = data.data if isinstance(data, EmbeddingDataset) else np.asarray(data, dtype=np.float64)
    total = 0.0
    for start in range(0, data.shape[0], 8192):
        total += cdist(data[start:start + 8192], centers, "sqeuclidean").min(axis=1).sum()
    return float(total)


def _project_to_ball(points, radius):
    return clip_rows(points, radius)


def _noisy_sample_init(X, cfg, budget, rng):
    """Draw k centers from a Gaussian fitted to privately released moments."""
    b_sum, b_sq, b_count = split_budget(budget, [2.0, 2.0, 1.0])
    d = X.shape[1]
    count = max(1.0, float(laplace_mechanism([X.shape[0]], 1.0, b_count, rng)[0]))
    mean = split_gaussian_mechanism(X.sum(axis=0), cfg.clip_radius, b_sum, rng) / count
    second = split_gaussian_mechanism((X ** 2).sum(axis=0), cfg.clip_radius ** 2, b_sq, rng) / count
    var = np.maximum(second - mean ** 2, (cfg.clip_radius / np.sqrt(d)) ** 2 * 1e-4)
    centers = mean + np.sqrt(var) * rng.normal(size=(cfg.k, d))
    return _project_to_ball(centers, cfg.clip_radius)


def _count_floor(count_budget):
    if count_budget.is_private:
        return max(1.0, 3.0 / count_budget.epsilon)
    return 1.0


def _overseed_init(X, cfg, budget, rng):
    """Partition by direction about a private centroid, then reduce to k centers.

    A noisy centroid is released first. Points are binned into cones around
    it, one per random unit direction (nearest direction by inner product),
    and noisy per-cone sums and counts are released. Cones whose noisy count
    and noisy mean are reliable become candidates. The heaviest is taken
    first; each further pick maximizes ``count * (squared distance to the
    nearest pick)``, which skips cones holding part of an already-covered
    cluster. Missing centers are filled uniformly from the ball.
    """
    R, d, k = cfg.clip_radius, X.shape[1], cfg.k
    centroid_budget, cell_budget = split_budget(budget, [1.0, 2.0])
    total_sum_b, total_count_b = split_budget(centroid_budget, [cfg.sum_count_ratio, 1.0])
    total = max(1.0, float(laplace_mechanism([X.shape[0]], 1.0, total_count_b, rng)[0]))
    centroid = _project_to_ball(split_gaussian_mechanism(X.sum(axis=0), R, total_sum_b, rng)[None, :] / total, R)[0]

    directions = rng.normal(size=(cfg.candidate_count, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    assignment = np.argmax((X - centroid) @ directions.T, axis=1)
    counts = np.bincount(assignment, minlength=len(directions))
    sum_budget, count_budget = split_budget(cell_budget, [cfg.sum_count_ratio, 1.0])
    noisy_sums = split_gaussian_mechanism(cluster_sums(X, assignment, len(directions)), R, sum_budget, rng)
    noisy_counts = laplace_mechanism(counts.astype(np.float64), 1.0, count_budget, rng)
    # keep cells whose mean noise is expected below R / 4
    floor = max(_count_floor(count_budget), 4.0 * split_gaussian_sigma(R, sum_budget) * np.sqrt(d) / R)
    keep = np.flatnonzero(noisy_counts >= floor)
    means = _project_to_ball(noisy_sums[keep] / noisy_counts[keep, None], R)
    weight = noisy_counts[keep]
    chosen = []
    if keep.size:
        chosen.append(int(np.argmax(weight)))
        nearest = np.sum((means - means[chosen[0]]) ** 2, axis=1)
        while len(chosen) < min(k, keep.size):
            score = weight * nearest
            best = int(np.argmax(score))
            if score[best] <= 0:
                break
            chosen.append(best)
            nearest = np.minimum(nearest, np.sum((means - means[best]) ** 2, axis=1))
    centers = means[chosen].reshape(-1, d)
    if len(chosen) < k:
        centers = np.vstack([centers, sample_ball(k - len(chosen), d, R, rng)])
    return centers


def dp_kmeans(ds: EmbeddingDataset, cfg: KMeansConfig, budget: PrivacyBudget, rng) -> ClusteringResult:
    """Run noisy Lloyd and return centers, final noisy counts and the assignment.

    Clusters whose noisy count falls below a noise-aware floor are re-seeded:
    by default next to the largest cluster's center (a split), or uniformly in
    the clip ball with ``reseed="uniform"``. Re-seeds are listed in
    ``ClusteringResult.reseeded`` as ``(iteration, cluster)`` pairs.
    """
    k, R, T = cfg.k, float(cfg.clip_radius), int(cfg.lloyd_iterations)
    if k > ds.n:
        raise ContractError(f"k={k} exceeds the number of points n={ds.n}")
    X = clip_rows(ds.data, R)
    d = ds.d

    if cfg.init in ("noisy-sample", "overseed"):
        init_budget, loop_budget = split_budget(budget, [cfg.init_fraction, 1 - cfg.init_fraction])
        init = _noisy_sample_init if cfg.init == "noisy-sample" else _overseed_init
        centers = init(X, cfg, init_budget, rng)
    else:
        loop_budget = budget
        centers = sample_ball(k, d, R, rng)
    per_iter = loop_budget.scaled(1.0 / T)
    sum_budget, count_budget = split_budget(per_iter, [cfg.sum_count_ratio, 1.0])
    min_count = _count_floor(count_budget)

    reseeded = []
    noisy_counts = np.zeros(k)
    for t in range(T):
        assignment, counts = assign_and_count(X, centers)
        sums = cluster_sums(X, assignment, k)
        noisy_sums = split_gaussian_mechanism(sums, R, sum_budget, rng)
        noisy_counts = laplace_mechanism(counts.astype(np.float64), 1.0, count_budget, rng)
        live = noisy_counts >= min_count
        updated = centers.copy()
        updated[live] = noisy_sums[live] / noisy_counts[live, None]
        updated = _project_to_ball(updated, R)
        if not live.all():
            sizes = np.where(live, noisy_counts, -np.inf)
            for j in np.flatnonzero(~live):
                reseeded.append((t, int(j)))
                if cfg.reseed == "uniform" or not np.isfinite(sizes.max()):
                    updated[j] = sample_ball(1, d, R, rng)[0]
                else:
                    big = int(np.argmax(sizes))
                    offset = rng.normal(size=d)
                    offset *= _SPLIT_OFFSET * R / np.linalg.norm(offset)
                    updated[j] = _project_to_ball((updated[big] + offset)[None, :], R)[0]
                    sizes[big] /= 2.0
        centers = updated

    assignment, _ = assign_and_count(ds.data, centers)
    return ClusteringResult(centers, noisy_counts, assignment, tuple(reseeded))
