import math
import statistics

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dpgs.bench import PlantedGmmSpec, plant_labeled
from dpgs.core import ConfigurationError, ContractError, EmbeddingDataset, PrivacyBudget, derive_rng
from dpgs.dp_kmeans import (
    ApproxGuarantee,
    KMeansConfig,
    assign_and_count,
    clip_rows,
    dp_kmeans,
    kmeans_cost,
)
from dpgs.mechanisms import gaussian_sigma
from oracles import lloyd, purity

NP = PrivacyBudget.non_private()


@pytest.fixture(scope="module")
def two_blobs():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal([10, 0], 0.1, (500, 2)), rng.normal([-10, 0], 0.1, (500, 2))])
    return EmbeddingDataset(X)


def _center_errors(centers, truth):
    gaps = np.linalg.norm(np.asarray(centers)[:, None, :] - np.asarray(truth)[None, :, :], axis=2)
    return gaps.min(axis=0)


def test_two_blobs_non_private_matches_exact_lloyd(two_blobs):
    res = dp_kmeans(two_blobs, KMeansConfig(k=2, clip_radius=11.0), NP, derive_rng(0, "km"))
    truth = np.array([[10.0, 0.0], [-10.0, 0.0]])
    assert _center_errors(res.centers, truth).max() <= 0.05
    oracle, _ = lloyd(two_blobs.data, truth)
    order = np.argsort(res.centers[:, 0])
    np.testing.assert_allclose(res.centers[order], oracle[np.argsort(oracle[:, 0])], rtol=0, atol=1e-9)
    assert sorted(res.noisy_counts) == [500, 500]


def test_k1_non_private_is_clipped_mean(rng):
    X = rng.normal(3.0, 2.0, size=(300, 4))
    res = dp_kmeans(EmbeddingDataset(X), KMeansConfig(k=1, clip_radius=5.0), NP, rng)
    np.testing.assert_allclose(res.centers[0], clip_rows(X, 5.0).mean(axis=0), atol=1e-9)
    assert res.assignment.tolist() == [0] * 300


def test_two_blobs_private_noise_scale(two_blobs):
    """epsilon=1, T=5 with uniform-ball init: errors track the calibrated noise.

    Per iteration the sums get Gaussian noise with sigma = R sqrt(2 ln(1.25/delta_s))/eps_s
    for the share (eps_s, delta_s) = (0.16, 1.6e-6); a 500-point cluster's center
    then moves by about s = sigma / 500 per coordinate, and a 2-d error norm
    exceeds 3 s with probability exp(-4.5) ~ 1%. Counts get Lap(1/0.04) noise.
    """
    R = 10.5
    s = gaussian_sigma(R, PrivacyBudget(0.16, 1.6e-6)) / 500
    count_scale = 1 / 0.04
    center_ok = count_ok = 0
    for seed in range(20):
        res = dp_kmeans(two_blobs, KMeansConfig(k=2, clip_radius=R, init="random-from-ball"),
                        PrivacyBudget(1.0, 1e-5), derive_rng(seed, "km"))
        center_ok += _center_errors(res.centers, [[10, 0], [-10, 0]]).max() <= 3 * s
        count_ok += np.abs(np.sort(res.noisy_counts) - 500).max() <= 4 * count_scale
    assert center_ok >= 18
    assert count_ok >= 18


def test_private_centers_stay_in_ball(two_blobs):
    for init in ("overseed", "random-from-ball", "noisy-sample"):
        res = dp_kmeans(two_blobs, KMeansConfig(k=4, clip_radius=3.0, init=init),
                        PrivacyBudget(0.3, 1e-6), derive_rng(1, init))
        assert np.all(np.linalg.norm(res.centers, axis=1) <= 3.0 * (1 + 1e-12))


def test_k_larger_than_n_rejected():
    with pytest.raises(ContractError):
        dp_kmeans(EmbeddingDataset(np.ones((2, 2))), KMeansConfig(k=3, clip_radius=1.0), NP, 0)


def test_config_validation():
    for bad in (dict(k=0, clip_radius=1.0), dict(k=1, clip_radius=0.0),
                dict(k=1, clip_radius=1.0, lloyd_iterations=0), dict(k=1, clip_radius=1.0, init="x")):
        with pytest.raises(ConfigurationError):
            KMeansConfig(**bad)


def test_empty_clusters_are_reseeded_and_recorded():
    X = np.random.default_rng(3).normal([5.0, 0.0], 0.01, size=(200, 2))
    for reseed in ("split-largest", "uniform"):
        cfg = KMeansConfig(k=3, clip_radius=10.0, init="random-from-ball", reseed=reseed)
        res = dp_kmeans(EmbeddingDataset(X), cfg, NP, derive_rng(4, reseed))
        assert res.reseeded, reseed
        assert all(0 <= t < cfg.lloyd_iterations and 0 <= j < 3 for t, j in res.reseeded)
        assert np.all(np.linalg.norm(res.centers, axis=1) <= 10.0 + 1e-9)


# assign_and_count -----------------------------------------------------------

def test_tie_goes_to_lowest_index():
    assignment, counts = assign_and_count(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert assignment.tolist() == [0] and counts.tolist() == [1, 0]


def test_centers_equal_points():
    X = np.array([[0.0, 0.0], [5.0, 1.0], [-3.0, 2.0]])
    assignment, counts = assign_and_count(X, X)
    assert assignment.tolist() == [0, 1, 2] and counts.tolist() == [1, 1, 1]


@given(arrays(np.float64, (100, 3), elements=st.floats(-50, 50)),
       arrays(np.float64, (3, 3), elements=st.floats(-50, 50)))
def test_assignment_is_nearest_center_and_counts_partition(X, centers):
    assignment, counts = assign_and_count(X, centers)
    assert counts.sum() == 100
    d2 = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2)
    chosen = d2[np.arange(100), assignment]
    assert np.all(chosen <= d2.min(axis=1) * (1 + 1e-12) + 1e-9)


def test_assign_rejects_bad_centers():
    with pytest.raises(ContractError):
        assign_and_count(np.ones((3, 2)), np.ones((2, 3)))


# planted-mixture properties -------------------------------------------------

def _planted(seed, separation=15.0):
    spec = PlantedGmmSpec(k=3, d=8, n=30000, weights=(0.5, 0.3, 0.2), separation=separation, sigma=0.5)
    plant = plant_labeled(spec, derive_rng(seed, "plant"))
    ds, components = plant.class_data(0)
    return plant.truths[0], ds, components


@pytest.mark.parametrize("budget", [NP, PrivacyBudget(1.0, 1e-5)], ids=["non-private", "eps1"])
def test_purity_under_separation(budget):
    """Separation 30 sigma with sigma=0.5: every point lands with its component."""
    for seed in range(10):
        _, ds, components = _planted(seed)
        res = dp_kmeans(ds, KMeansConfig(k=3, clip_radius=16.0), budget, derive_rng(seed, "km"))
        assert purity(res.assignment, components, 3) == 1.0, seed


def test_cost_below_planted_opt_ceiling():
    sigma, d = 0.5, 8
    for seed in range(3):
        truth, ds, _ = _planted(seed)
        ceiling = (4 / 3) * sigma ** 2 * d * ds.n * 1.1
        assert kmeans_cost(ds, truth.means) <= ceiling
        res = dp_kmeans(ds, KMeansConfig(k=3, clip_radius=16.0), NP, derive_rng(seed, "km"))
        assert kmeans_cost(ds, res.centers) <= ceiling
        assert ApproxGuarantee(1.0, 0.1 * ceiling).holds(kmeans_cost(ds, res.centers),
                                                        kmeans_cost(ds, truth.means))


def test_more_budget_never_hurts_median_center_error():
    medians = []
    for eps in (0.25, 0.5, 1.0, 2.0, 4.0):
        errs = []
        for seed in range(20):
            truth, ds, _ = _planted(seed)
            res = dp_kmeans(ds, KMeansConfig(k=3, clip_radius=16.0), PrivacyBudget(eps, 1e-5),
                            derive_rng(seed, "km", eps))
            errs.append(_center_errors(res.centers, truth.means).max())
        medians.append(statistics.median(errs))
    assert all(b <= a for a, b in zip(medians, medians[1:])), medians


def test_approx_guarantee_validation():
    with pytest.raises(ContractError):
        ApproxGuarantee(0.5, 0.0)
    assert ApproxGuarantee(2.0, 1.0).holds(5.0, 2.0)
    assert not ApproxGuarantee(1.0, 0.0).holds(math.nextafter(2.0, 3.0), 2.0)
