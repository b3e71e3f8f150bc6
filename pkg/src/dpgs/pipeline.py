"""Private mixture fitting, sampling and vote filtering, run per class.

The budget is split into five shares: clustering, means, covariances,
embedding filtering and image filtering. Image filtering has no counterpart
here, so its share is recorded as reserved and never spent; the filtering
share is likewise reserved when filtering is disabled. Classes are disjoint,
so their ledgers compose in parallel.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core.errors import ConfigurationError, ContractError, DegenerateFitError
from .core.io import split_by_label
from .core.rng import as_seed, derive_rng, derive_seed
from .core.types import (
    BudgetLedger,
    ClusteringResult,
    EmbeddingDataset,
    GmmModel,
    PrivacyBudget,
    concat_datasets,
)
from .dp_gaussian import EstimatorConfig, dp_gaussian, dp_weights
from .dp_kmeans import KMeansConfig, dp_kmeans
from .gmm import sample_gmm
from .mechanisms import format_ledger, laplace_mechanism, ledger_audit, split_budget

STAGES = ("dp_cluster", "dp_mean", "dp_covariance", "dp_filter_embeddings", "dp_filter_image")
RESERVED = " (reserved)"
CLASS_GROUP = "class"


@dataclass(frozen=True)
class PipelineConfig:
    budget: PrivacyBudget
    kmeans: KMeansConfig
    estimator: EstimatorConfig = EstimatorConfig()
    generations: int = 1000
    shares: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    generation_multiplier: float = 6.0
    vote_threshold: float = 6.0
    filter_enabled: bool = True

    def __post_init__(self):
        if len(self.shares) != len(STAGES):
            raise ConfigurationError(f"expected {len(STAGES)} budget shares, got {len(self.shares)}")
        if any(not s > 0 for s in self.shares):
            raise ConfigurationError("budget shares must be positive")
        if int(self.generations) != self.generations or self.generations < 1:
            raise ConfigurationError("generations must be a positive integer")
        if not self.generation_multiplier >= 1:
            raise ConfigurationError("generation_multiplier must be at least 1")
        if not np.isfinite(self.vote_threshold):
            raise ConfigurationError("vote_threshold must be finite")
        object.__setattr__(self, "shares", tuple(float(s) for s in self.shares))

    @property
    def stage_budgets(self):
        return dict(zip(STAGES, split_budget(self.budget, self.shares)))

    @property
    def per_class_generated(self) -> int:
        return int(round(self.generation_multiplier * self.generations))


@dataclass(frozen=True, eq=False)
class GmmFit:
    model: GmmModel
    clustering: ClusteringResult
    degenerate: tuple
    ledger: BudgetLedger


def fit_private_gmm_detailed(ds: EmbeddingDataset, cfg: PipelineConfig, rng,
                             ledger: Optional[BudgetLedger] = None) -> GmmFit:
    """Cluster, then estimate each cluster's Gaussian, then derive weights.

    Clusters are disjoint, so the per-cluster mean and covariance releases
    compose in parallel: each stage costs its share once. Three sequential
    entries are appended to ``ledger`` (a fresh one when omitted).
    """
    seed = as_seed(rng)
    budgets = cfg.stage_budgets
    ledger = ledger if ledger is not None else BudgetLedger(cfg.budget)

    clustering = dp_kmeans(ds, cfg.kmeans, budgets["dp_cluster"], derive_rng(seed, "dp_cluster"))
    ledger.record("dp_cluster", budgets["dp_cluster"])

    k, d = clustering.k, ds.d
    means = np.empty((k, d))
    covs = np.empty((k, d) if cfg.estimator.covariance_model == "diagonal" else (k, d, d))
    degenerate = []
    for j in range(k):
        rows = ds.data[clustering.assignment == j]
        est = dp_gaussian(rows, clustering.centers[j], cfg.estimator, budgets["dp_mean"],
                          budgets["dp_covariance"], derive_rng(seed, "dp_gaussian", j))
        means[j], covs[j] = est.mean, est.covariance
        if est.degenerate:
            degenerate.append(j)
    ledger.record("dp_mean", budgets["dp_mean"])
    ledger.record("dp_covariance", budgets["dp_covariance"])

    if len(degenerate) == k:
        raise DegenerateFitError(f"all {k} clusters are degenerate")
    counts = np.array(clustering.noisy_counts, dtype=np.float64)
    counts[degenerate] = 0.0
    model = GmmModel(dp_weights(counts), means, covs, cfg.estimator.covariance_model)
    return GmmFit(model, clustering, tuple(degenerate), ledger)


def fit_private_gmm(ds: EmbeddingDataset, cfg: PipelineConfig, rng,
                    ledger: Optional[BudgetLedger] = None) -> GmmModel:
    return fit_private_gmm_detailed(ds, cfg, rng, ledger).model


def nearest_indices(queries, points, candidates=8) -> np.ndarray:
    """Index of the nearest row of ``points`` for each query (lowest index on ties)."""
    tree = cKDTree(points)
    kk = min(candidates, points.shape[0])
    dist, idx = tree.query(queries, k=kk)
    if kk == 1:
        return np.asarray(idx, dtype=np.int64)
    tied = dist <= dist[:, :1]
    return np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1)


@dataclass(frozen=True, eq=False)
class FilterResult:
    survivors: Optional[EmbeddingDataset]
    mask: np.ndarray
    noisy_votes: np.ndarray
    empty: bool

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def dp_filter_embeddings(generated: EmbeddingDataset, original: EmbeddingDataset, threshold,
                         budget: PrivacyBudget, rng) -> FilterResult:
    """Keep generated points whose noisy nearest-neighbour vote reaches ``threshold``.

    Each original point votes once for its nearest generated point, so the
    vote histogram has l1 sensitivity 1 and gets Lap(1/epsilon) noise per bin.
    Survivors keep their generated order. An empty result is flagged and
    warned about rather than raised.
    """
    if generated.d != original.d:
        raise ContractError(f"dimension mismatch: generated d={generated.d}, original d={original.d}")
    nearest = nearest_indices(original.data, generated.data)
    votes = np.bincount(nearest, minlength=generated.n).astype(np.float64)
    noisy = laplace_mechanism(votes, 1.0, budget, rng)
    mask = noisy >= threshold
    if not mask.any():
        warnings.warn("vote filtering kept no generated embeddings", RuntimeWarning, stacklevel=2)
        return FilterResult(None, mask, noisy, True)
    return FilterResult(generated.take(np.flatnonzero(mask)), mask, noisy, False)


@dataclass(eq=False)
class ClassResult:
    label: int
    fit: GmmFit
    generated: int
    survivors: Optional[EmbeddingDataset]
    filter_empty: bool = False


@dataclass(eq=False)
class SyntheticReport:
    config: PipelineConfig
    seed: int
    models: dict
    generated: Optional[EmbeddingDataset]
    generated_counts: dict
    survivors: dict
    ledger: BudgetLedger
    metadata: dict = field(default_factory=dict)

    def audit(self) -> PrivacyBudget:
        return ledger_audit(self.ledger)

    def to_text(self) -> str:
        """Key-value sections; deterministic for a fixed configuration and seed."""
        cfg = self.config
        lines = ["[run]", f"seed = {self.seed}",
                 f"epsilon = {cfg.budget.epsilon!r}", f"delta = {cfg.budget.delta!r}",
                 f"shares = {','.join(repr(s) for s in cfg.shares)}",
                 f"k = {cfg.kmeans.k}", f"generations = {cfg.generations}",
                 f"generation_multiplier = {cfg.generation_multiplier!r}",
                 f"vote_threshold = {cfg.vote_threshold!r}",
                 f"filter_enabled = {str(cfg.filter_enabled).lower()}",
                 f"classes = {','.join(str(c) for c in sorted(self.models))}", ""]
        for label in sorted(self.models):
            model = self.models[label]
            meta = self.metadata.get(label, {})
            lines += [f"[class {label}]",
                      f"generated = {self.generated_counts[label]}",
                      f"survivors = {self.survivors[label]}",
                      f"weights = {','.join(repr(float(w)) for w in model.weights)}",
                      f"degenerate_clusters = {','.join(map(str, meta.get('degenerate', ())))}",
                      f"reseeded = {';'.join(f'{t}:{j}' for t, j in meta.get('reseeded', ()))}",
                      f"filter_empty = {str(meta.get('filter_empty', False)).lower()}", ""]
        lines.append("[ledger]")
        for i, e in enumerate(self.ledger.entries):
            lines.append(f"entry.{i} = {e.name} | {e.kind} | {e.group or '-'}={e.partition or '-'}"
                         f" | {e.budget.epsilon!r} | {e.budget.delta!r}")
        spent = self.audit()
        lines += ["", "[audit]", f"epsilon = {spent.epsilon!r}", f"delta = {spent.delta!r}",
                  "status = ok", ""]
        return "\n".join(lines)

    def ledger_text(self) -> str:
        return format_ledger(self.ledger)


def _record_filter_stages(ledger, budgets, filtered):
    name = "dp_filter_embeddings" + ("" if filtered else RESERVED)
    ledger.record(name, budgets["dp_filter_embeddings"])
    ledger.record("dp_filter_image" + RESERVED, budgets["dp_filter_image"])


def _run_class(label, class_ds, cfg, root_seed) -> ClassResult:
    seed = derive_seed(root_seed, CLASS_GROUP, label)
    budgets = cfg.stage_budgets
    ledger = BudgetLedger(cfg.budget)
    fit = fit_private_gmm_detailed(class_ds, cfg, seed, ledger)
    generated = sample_gmm(fit.model, cfg.per_class_generated, derive_rng(seed, "sample"), label=label)
    empty = False
    if cfg.filter_enabled:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            result = dp_filter_embeddings(generated, class_ds, cfg.vote_threshold,
                                          budgets["dp_filter_embeddings"], derive_rng(seed, "filter"))
        survivors, empty = result.survivors, result.empty
    else:
        survivors = generated
    _record_filter_stages(ledger, budgets, cfg.filter_enabled)
    return ClassResult(label, fit, generated.n, survivors, empty)


def run_pipeline(ds: EmbeddingDataset, cfg: PipelineConfig, rng, jobs=1) -> SyntheticReport:
    """Fit, sample and (optionally) filter every class; audit the combined ledger."""
    parts = dict(split_by_label(ds))
    for label in range(ds.num_classes):
        if label not in parts:
            raise ContractError(f"class {label} has no records")
    root = as_seed(rng)
    labels = sorted(parts)
    if jobs > 1 and len(labels) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda c: _run_class(c, parts[c], cfg, root), labels))
    else:
        results = [_run_class(c, parts[c], cfg, root) for c in labels]

    ledger = BudgetLedger(cfg.budget)
    for r in results:
        ledger.extend(r.fit.ledger.as_parallel(CLASS_GROUP, r.label))
    kept = [r.survivors for r in results if r.survivors is not None]
    for r in results:
        if r.filter_empty:
            warnings.warn(f"class {r.label}: vote filtering kept no embeddings", RuntimeWarning,
                          stacklevel=2)
    report = SyntheticReport(
        config=cfg,
        seed=root,
        models={r.label: r.fit.model for r in results},
        generated=concat_datasets(kept) if kept else None,
        generated_counts={r.label: r.generated for r in results},
        survivors={r.label: 0 if r.survivors is None else r.survivors.n for r in results},
        ledger=ledger,
        metadata={r.label: {"degenerate": r.fit.degenerate, "reseeded": r.fit.clustering.reseeded,
                            "filter_empty": r.filter_empty} for r in results},
    )
    report.audit()
    return report
