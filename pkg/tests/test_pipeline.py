import statistics
from dataclasses import replace

import numpy as np
import pytest

from dpgs.bench import PlantedGmmSpec, plant_labeled, reference_pipeline_config
from dpgs.core import (
    BudgetLedger,
    ConfigurationError,
    ContractError,
    DegenerateFitError,
    EmbeddingDataset,
    GmmModel,
    PrivacyBudget,
    derive_rng,
)
from dpgs.dp_gaussian import EstimatorConfig
from dpgs.dp_kmeans import KMeansConfig
from dpgs.gmm import gmm_wasserstein_bound, match_components, sample_gmm
from dpgs.mechanisms import ledger_audit
from dpgs.pipeline import (
    PipelineConfig,
    dp_filter_embeddings,
    fit_private_gmm,
    fit_private_gmm_detailed,
    nearest_indices,
    run_pipeline,
)
from oracles import cluster_then_estimate

NP = PrivacyBudget.non_private()


def _two_gmm(seed=0, n=4000):
    truth = GmmModel([0.6, 0.4], [[3.0, 0.0, 0.0], [-3.0, 1.0, 0.0]], [[0.2, 0.3, 0.1], [0.1, 0.1, 0.4]])
    return truth, sample_gmm(truth, n, derive_rng(seed, "two"))


def _wide_config(budget, k):
    """Clip radii larger than the data diameter, so clipping is inactive."""
    return PipelineConfig(budget=budget, kmeans=KMeansConfig(k=k, clip_radius=50.0, lloyd_iterations=20),
                          estimator=EstimatorConfig(clip_radius=50.0, variance_floor=1e-12))


def _assert_matches_oracle(model, data, init_means):
    weights, means, covs, _ = cluster_then_estimate(data, init_means)
    order = match_components(means, model.means, "hungarian")
    np.testing.assert_allclose(model.weights[order], weights, rtol=0, atol=1e-9)
    np.testing.assert_allclose(model.means[order], means, rtol=0, atol=1e-9)
    np.testing.assert_allclose(model.covariances[order], covs, rtol=0, atol=1e-9)


def test_non_private_fit_matches_cluster_then_estimate_oracle():
    truth, ds = _two_gmm()
    model = fit_private_gmm(ds, _wide_config(NP, 2), 0)
    _assert_matches_oracle(model, ds.data, truth.means)


def test_k1_is_single_gaussian_fit(rng):
    X = rng.normal(2.0, 1.5, size=(500, 3))
    model = fit_private_gmm(EmbeddingDataset(X), _wide_config(NP, 1), 0)
    np.testing.assert_allclose(model.weights, [1.0])
    np.testing.assert_allclose(model.means[0], X.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(model.covariances[0], X.var(axis=0), atol=1e-9)


def test_fit_records_three_sequential_entries():
    _, ds = _two_gmm()
    cfg = _wide_config(PrivacyBudget(1.0, 1e-5), 2)
    ledger = BudgetLedger(cfg.budget)
    fit = fit_private_gmm_detailed(ds, cfg, 0, ledger)
    assert [e.name for e in ledger.entries] == ["dp_cluster", "dp_mean", "dp_covariance"]
    assert all(e.kind == "sequential" for e in ledger.entries)
    spent = ledger_audit(ledger)
    assert spent.epsilon == pytest.approx(0.6, rel=1e-12)
    assert fit.model.k == 2


def test_all_degenerate_clusters_raise():
    _, ds = _two_gmm(n=200)
    cfg = replace(_wide_config(PrivacyBudget(1.0, 1e-5), 2),
                  estimator=EstimatorConfig(clip_radius=5.0, min_count=1e9))
    with pytest.raises(DegenerateFitError):
        fit_private_gmm(ds, cfg, 0)


def test_degenerate_cluster_gets_zero_weight():
    ds = EmbeddingDataset(np.random.default_rng(0).normal([4.0, 0.0], 0.01, size=(300, 2)))
    cfg = PipelineConfig(budget=NP, kmeans=KMeansConfig(k=3, clip_radius=10.0, init="random-from-ball",
                                                        reseed="uniform", lloyd_iterations=1),
                         estimator=EstimatorConfig(clip_radius=5.0))
    fits = [fit_private_gmm_detailed(ds, cfg, seed) for seed in range(10)]
    degenerate = [f for f in fits if f.degenerate]
    assert degenerate, "expected an empty cluster in some run"
    for f in degenerate:
        assert np.all(f.model.weights[list(f.degenerate)] == 0.0)


def test_config_validation():
    km = KMeansConfig(k=1, clip_radius=1.0)
    for bad in (dict(shares=(1, 1, 1)), dict(shares=(1, 1, 1, 1, 0)), dict(generations=0),
                dict(generation_multiplier=0.5), dict(vote_threshold=float("nan"))):
        with pytest.raises(ConfigurationError):
            PipelineConfig(budget=NP, kmeans=km, **bad)


# filtering ------------------------------------------------------------------------

def test_filter_self_votes_all_survive(rng):
    ds = EmbeddingDataset(rng.normal(size=(40, 3)))
    result = dp_filter_embeddings(ds, ds, 1.0, NP, rng)
    assert result.count == 40 and result.survivors == ds


def test_filter_drops_far_point(rng):
    original = EmbeddingDataset(rng.normal(size=(100, 2)))
    generated = EmbeddingDataset(np.vstack([np.zeros((1, 2)), [[1e6, 1e6]]]))
    result = dp_filter_embeddings(generated, original, 6.0, NP, rng)
    assert result.mask.tolist() == [True, False]
    assert result.noisy_votes.tolist() == [100.0, 0.0]


def test_filter_empty_result_warns_and_flags(rng):
    original = EmbeddingDataset(rng.normal(size=(5, 2)))
    with pytest.warns(RuntimeWarning):
        result = dp_filter_embeddings(original, original, 6.0, NP, rng)
    assert result.empty and result.survivors is None and result.count == 0


def test_filter_keeps_generated_order(rng):
    original = EmbeddingDataset(np.repeat(np.arange(5.0)[:, None], 10, axis=0))
    generated = EmbeddingDataset(np.arange(5.0)[::-1, None])
    result = dp_filter_embeddings(generated, original, 6.0, NP, rng)
    np.testing.assert_array_equal(result.survivors.data[:, 0], [4, 3, 2, 1, 0])


def test_filter_dimension_mismatch(rng):
    with pytest.raises(ContractError):
        dp_filter_embeddings(EmbeddingDataset(np.ones((2, 2))), EmbeddingDataset(np.ones((2, 3))),
                             1.0, NP, rng)


def test_filter_deterministic_for_fixed_seed(rng):
    original = EmbeddingDataset(rng.normal(size=(500, 3)))
    generated = EmbeddingDataset(rng.normal(size=(300, 3)))
    budget = PrivacyBudget(0.2)
    a = dp_filter_embeddings(generated, original, 2.0, budget, derive_rng(5, "f"))
    b = dp_filter_embeddings(generated, original, 2.0, budget, derive_rng(5, "f"))
    np.testing.assert_array_equal(a.mask, b.mask)


def test_nearest_ties_go_to_lowest_index():
    points = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    assert nearest_indices(np.array([[0.0, 0.0], [2.0, 0.0]]), points).tolist() == [0, 0]


def test_filter_survivor_fraction_on_planted_data(reference_plant):
    """6m generated, threshold 6: roughly a third survive (tolerance 50%)."""
    report = run_pipeline(reference_plant.data, reference_pipeline_config(1.0, generations=2000), 0)
    for label, survivors in report.survivors.items():
        fraction = survivors / report.generated_counts[label]
        assert abs(fraction - 1 / 3) <= 0.5 / 3, (label, fraction)


# run_pipeline ---------------------------------------------------------------------

def _labeled_two_class(n=2000):
    spec = PlantedGmmSpec(k=2, d=3, n=n, classes=2, separation=8.0, sigma=0.3, ball_radius=10.0)
    return plant_labeled(spec, derive_rng(1, "plant"))


def test_run_pipeline_non_private_matches_per_class_oracles():
    plant = _labeled_two_class()
    cfg = replace(_wide_config(NP, 2), generations=10, filter_enabled=False)
    report = run_pipeline(plant.data, cfg, 3)
    for label, truth in enumerate(plant.truths):
        ds, _ = plant.class_data(label)
        _assert_matches_oracle(report.models[label], ds.data, truth.means)


def test_ten_classes_compose_in_parallel():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(1000, 2)) + np.repeat(np.arange(10) * 10.0, 100)[:, None]
    ds = EmbeddingDataset(X, np.repeat(np.arange(10), 100))
    cfg = PipelineConfig(budget=PrivacyBudget(1.0, 1e-5),
                         kmeans=KMeansConfig(k=1, clip_radius=100.0),
                         estimator=EstimatorConfig(clip_radius=5.0), generations=5)
    report = run_pipeline(ds, cfg, 0)
    spent = report.audit()
    assert spent.epsilon == pytest.approx(1.0, rel=1e-12)
    assert spent.delta == pytest.approx(1e-5, rel=1e-12)
    assert len(report.ledger.entries) == 50


def test_unfiltered_counts_and_labels():
    plant = _labeled_two_class()
    cfg = replace(_wide_config(PrivacyBudget(1.0, 1e-5), 2), generations=1000, filter_enabled=False)
    report = run_pipeline(plant.data, cfg, 0)
    assert report.generated_counts == {0: 6000, 1: 6000}
    assert np.bincount(report.generated.labels).tolist() == [6000, 6000]
    names = [e.name for e in report.ledger.entries if e.partition == "0"]
    assert names == ["dp_cluster", "dp_mean", "dp_covariance", "dp_filter_embeddings (reserved)",
                     "dp_filter_image (reserved)"]


def test_missing_class_is_named():
    ds = EmbeddingDataset(np.ones((4, 2)) * np.arange(4)[:, None], [0, 0, 2, 2])
    with pytest.raises(ContractError, match="class 1"):
        run_pipeline(ds, _wide_config(NP, 1), 0)


def test_report_is_deterministic_and_jobs_do_not_matter():
    plant = _labeled_two_class()
    cfg = replace(_wide_config(PrivacyBudget(1.0, 1e-5), 2), generations=200)
    a = run_pipeline(plant.data, cfg, 11)
    b = run_pipeline(plant.data, cfg, 11, jobs=2)
    assert a.to_text() == b.to_text()
    assert a.generated == b.generated
    assert "[audit]" in a.to_text() and "status = ok" in a.to_text()


def test_resampling_is_post_processing():
    plant = _labeled_two_class()
    cfg = replace(_wide_config(PrivacyBudget(1.0, 1e-5), 2), generations=100)
    report = run_pipeline(plant.data, cfg, 0)
    before = list(report.ledger.entries)
    sample_gmm(report.models[0], 500, derive_rng(99, "again"))
    assert report.ledger.entries == before


def test_wasserstein_bound_shrinks_with_n():
    medians = []
    for n in (5_000, 20_000, 80_000):
        bounds = []
        for seed in range(20):
            spec = PlantedGmmSpec(k=3, d=8, n=n, weights=(0.5, 0.3, 0.2), separation=15.0, sigma=0.5)
            plant = plant_labeled(spec, derive_rng(seed, "plant"))
            ds, _ = plant.class_data(0)
            cfg = PipelineConfig(budget=PrivacyBudget(1.0, 1e-5),
                                 kmeans=KMeansConfig(k=3, clip_radius=16.0),
                                 estimator=EstimatorConfig(clip_radius=2.0, mean_clip_radius=4.0))
            model = fit_private_gmm(ds, cfg, derive_seed_int(seed))
            bounds.append(gmm_wasserstein_bound(plant.truths[0], model))
        medians.append(statistics.median(bounds))
    assert medians[0] > medians[1] > medians[2], medians


def derive_seed_int(seed):
    return int(derive_rng(seed, "fit").integers(2**62))
