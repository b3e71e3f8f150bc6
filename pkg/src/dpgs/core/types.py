"""Immutable domain types: datasets, mixture models, budgets, ledgers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, ShapeError

COVARIANCE_MODELS = ("diagonal", "full")
COMPOSITION_KINDS = ("sequential", "parallel")


def _frozen(array):
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class EmbeddingDataset:
    """``n`` embedding vectors of dimension ``d`` with optional class labels."""

    data: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeError(f"embedding matrix must be 2-d, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeError(f"embedding matrix must be non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ContractError("embedding matrix contains NaN or Inf")
        object.__setattr__(self, "data", _frozen(data.copy()))
        if self.labels is not None:
            raw = np.asarray(self.labels)
            if raw.shape != (data.shape[0],):
                raise ShapeError(f"expected {data.shape[0]} labels, got shape {raw.shape}")
            labels = raw.astype(np.int64)
            if not np.array_equal(labels, raw) or np.any(labels < 0):
                raise ContractError("labels must be nonnegative integers")
            object.__setattr__(self, "labels", _frozen(labels))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1

    def take(self, index) -> "EmbeddingDataset":
        labels = None if self.labels is None else self.labels[index]
        return EmbeddingDataset(self.data[index], labels)

    def with_labels(self, labels) -> "EmbeddingDataset":
        return EmbeddingDataset(self.data, labels)

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, EmbeddingDataset):
            return NotImplemented
        if not np.array_equal(self.data, other.data):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)

    __hash__ = None


def concat_datasets(parts) -> EmbeddingDataset:
    parts = list(parts)
    if not parts:
        raise ShapeError("cannot concatenate zero datasets")
    data = np.concatenate([p.data for p in parts])
    if all(p.has_labels for p in parts):
        labels = np.concatenate([p.labels for p in parts])
    elif any(p.has_labels for p in parts):
        raise ContractError("cannot mix labelled and unlabelled datasets")
    else:
        labels = None
    return EmbeddingDataset(data, labels)


@dataclass(frozen=True, eq=False)
class GmmModel:
    """A k-component Gaussian mixture.

    ``covariances`` has shape (k, d) for the diagonal model (per-coordinate
    variances) and (k, d, d) for the full model.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    covariance_model: str = "diagonal"

    def __post_init__(self):
        if self.covariance_model not in COVARIANCE_MODELS:
            raise ContractError(f"unknown covariance model {self.covariance_model!r}")
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        means = np.asarray(self.means, dtype=np.float64)
        covs = np.asarray(self.covariances, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] != weights.shape[0] or means.shape[0] < 1:
            raise ShapeError(f"means shape {means.shape} does not match {weights.shape[0]} weights")
        k, d = means.shape
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ContractError("weights must be nonnegative and sum to 1")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs))):
            raise ContractError("means and covariances must be finite")
        if self.covariance_model == "diagonal":
            if covs.shape != (k, d):
                raise ShapeError(f"diagonal covariances must have shape {(k, d)}, got {covs.shape}")
            if np.any(covs < 0):
                raise ContractError("diagonal variances must be nonnegative")
        else:
            if covs.shape != (k, d, d):
                raise ShapeError(f"full covariances must have shape {(k, d, d)}, got {covs.shape}")
            for cov in covs:
                scale = max(1.0, float(np.abs(cov).max()))
                if not np.allclose(cov, cov.T, atol=1e-10 * scale):
                    raise ContractError("covariance matrices must be symmetric")
                if np.linalg.eigvalsh(cov).min() < -1e-10 * scale:
                    raise ContractError("covariance matrices must be positive semidefinite")
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "covariances", _frozen(covs))

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def covariance_matrix(self, i) -> np.ndarray:
        if self.covariance_model == "diagonal":
            return np.diag(self.covariances[i])
        return np.array(self.covariances[i])

    def permuted(self, order) -> "GmmModel":
        order = np.asarray(order)
        weights = self.weights[order]
        return GmmModel(weights / weights.sum(), self.means[order],
                        self.covariances[order], self.covariance_model)


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) pair.

    ``epsilon = inf`` is the non-private sentinel: every mechanism returns its
    input unchanged. ``epsilon = 0`` only arises as a composed total of an
    empty ledger; mechanisms reject it.
    """

    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        eps, delta = float(self.epsilon), float(self.delta)
        if math.isnan(eps) or eps < 0:
            raise ContractError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= delta < 1.0:
            raise ContractError(f"delta must lie in [0, 1), got {self.delta}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "delta", delta)

    @classmethod
    def non_private(cls) -> "PrivacyBudget":
        return cls(math.inf, 0.0)

    @property
    def is_private(self) -> bool:
        return math.isfinite(self.epsilon)

    def scaled(self, fraction) -> "PrivacyBudget":
        if not self.is_private:
            return self
        return PrivacyBudget(self.epsilon * fraction, self.delta * fraction)

    def __str__(self):
        if not self.is_private:
            return "(non-private)"
        return f"(epsilon={self.epsilon:.12g}, delta={self.delta:.12g})"


@dataclass(frozen=True)
class LedgerEntry:
    """One privacy expenditure.

    Parallel entries sharing a ``group`` were run on disjoint partitions of
    the data; entries with the same ``(group, partition)`` compose
    sequentially inside that partition.
    """

    name: str
    budget: PrivacyBudget
    kind: str = "sequential"
    group: Optional[str] = None
    partition: Optional[str] = None

    def __post_init__(self):
        if self.kind not in COMPOSITION_KINDS:
            raise ContractError(f"unknown composition kind {self.kind!r}")
        if self.kind == "parallel" and self.group is None:
            raise ContractError("parallel ledger entries need a group")


@dataclass
class BudgetLedger:
    """Audit trail of privacy spending. Owned and mutated by a single writer."""

    total: PrivacyBudget
    entries: list = field(default_factory=list)

    def record(self, name, budget, kind="sequential", group=None, partition=None):
        entry = LedgerEntry(name, budget, kind, group,
                            None if partition is None else str(partition))
        self.entries.append(entry)
        return entry

    def extend(self, entries):
        self.entries.extend(entries)

    def as_parallel(self, group, partition):
        """Entries of this ledger re-tagged as one partition of a parallel group."""
        return [LedgerEntry(e.name, e.budget, "parallel", group, str(partition))
                for e in self.entries]


@dataclass(frozen=True, eq=False)
class ClusteringResult:
    centers: np.ndarray
    noisy_counts: np.ndarray
    assignment: np.ndarray
    reseeded: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "centers", _frozen(np.asarray(self.centers, dtype=np.float64)))
        object.__setattr__(self, "noisy_counts", _frozen(np.asarray(self.noisy_counts, dtype=np.float64)))
        object.__setattr__(self, "assignment", _frozen(np.asarray(self.assignment, dtype=np.int64)))
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise ShapeError("clustering needs at least one center")

    @property
    def k(self) -> int:
        return self.centers.shape[0]


@dataclass(frozen=True)
class SeparationSpec:
    """Geometry of a mixture's means and scales.

    ``delta_sep`` is the minimum pairwise mean distance, ``mean_diameter`` the
    maximum, ``sigma_max`` a scale with every covariance below sigma^2 I.
    Single-component mixtures have both distances equal to zero.
    """

    delta_sep: float
    sigma_max: float
    mean_diameter: float
    w_min: float

    def __post_init__(self):
        if min(self.delta_sep, self.mean_diameter) < 0 or self.sigma_max <= 0 or self.w_min < 0:
            raise ContractError("separation parameters must be nonnegative, sigma positive")
        if self.delta_sep > self.mean_diameter + 1e-12:
            raise ContractError("minimum separation cannot exceed the mean diameter")

    @classmethod
    def from_model(cls, model: GmmModel) -> "SeparationSpec":
        means = model.means
        if model.k > 1:
            gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
            off = gaps[~np.eye(model.k, dtype=bool)]
            delta_sep, diameter = float(off.min()), float(off.max())
        else:
            delta_sep = diameter = 0.0
        if model.covariance_model == "diagonal":
            top = float(model.covariances.max())
        else:
            top = max(float(np.linalg.eigvalsh(c).max()) for c in model.covariances)
        return cls(delta_sep, math.sqrt(max(top, 1e-300)), diameter, float(model.weights.min()))
