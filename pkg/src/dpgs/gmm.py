"""Mixture sampling and distances between Gaussians and between mixtures."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core.errors import ContractError
from .core.types import EmbeddingDataset, GmmModel, SeparationSpec

_PSD_TOL = 1e-10


def _sqrt_psd(matrix):
    values, vectors = np.linalg.eigh(0.5 * (matrix + matrix.T))
    scale = max(1.0, float(np.abs(values).max(initial=0.0)))
    if values.min(initial=0.0) < -_PSD_TOL * scale:
        raise ContractError("covariance is not positive semidefinite")
    return (vectors * np.sqrt(np.maximum(values, 0.0))) @ vectors.T


def sample_gmm(model: GmmModel, m: int, rng, label=None) -> EmbeddingDataset:
    """Draw ``m`` iid points; labels are the generating component indices.

    Pass ``label`` to tag every point with a fixed class id instead.
    Sampling is post-processing of the model and spends no privacy budget.
    """
    m = int(m)
    if m < 1:
        raise ContractError("need at least one sample")
    components = rng.choice(model.k, size=m, p=model.weights)
    z = rng.normal(size=(m, model.d))
    out = np.empty((m, model.d))
    for j in range(model.k):
        rows = components == j
        if not rows.any():
            continue
        if model.covariance_model == "diagonal":
            out[rows] = model.means[j] + z[rows] * np.sqrt(model.covariances[j])
        else:
            out[rows] = model.means[j] + z[rows] @ _sqrt_psd(model.covariances[j])
    labels = components if label is None else np.full(m, int(label))
    return EmbeddingDataset(out, labels)


def _as_cov(cov):
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 1:
        if np.any(cov < -_PSD_TOL * max(1.0, float(np.abs(cov).max(initial=0.0)))):
            raise ContractError("variances must be nonnegative")
    elif cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ContractError(f"covariance must be a vector or square matrix, got {cov.shape}")
    return cov


def w2_gaussian(mu1, cov1, mu2, cov2) -> float:
    """2-Wasserstein distance between two Gaussians.

    Covariances may be variance vectors (diagonal) or matrices. Two diagonal
    inputs use ``||m1 - m2||^2 + ||sqrt(v1) - sqrt(v2)||^2`` directly; otherwise
    the Bures term ``tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)`` is used.
    """
    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    cov1, cov2 = _as_cov(cov1), _as_cov(cov2)
    mean_term = float(np.sum((mu1 - mu2) ** 2))
    if cov1.ndim == 1 and cov2.ndim == 1:
        cov_term = float(np.sum((np.sqrt(np.maximum(cov1, 0)) - np.sqrt(np.maximum(cov2, 0))) ** 2))
    else:
        s1 = np.diag(cov1) if cov1.ndim == 1 else cov1
        s2 = np.diag(cov2) if cov2.ndim == 1 else cov2
        root1 = _sqrt_psd(s1)
        cross = _sqrt_psd(root1 @ s2 @ root1)
        cov_term = max(0.0, float(np.trace(s1) + np.trace(s2) - 2.0 * np.trace(cross)))
    return math.sqrt(mean_term + cov_term)


def match_components(true_means, est_means, method="greedy") -> np.ndarray:
    """``order[i]`` is the estimated component matched to true component ``i``.

    ``greedy`` repeatedly pairs the globally closest unmatched means;
    ``hungarian`` minimizes the total distance exactly.
    """
    true_means, est_means = np.asarray(true_means), np.asarray(est_means)
    if true_means.shape != est_means.shape:
        raise ContractError(f"cannot match means of shapes {true_means.shape} and {est_means.shape}")
    cost = np.linalg.norm(true_means[:, None, :] - est_means[None, :, :], axis=-1)
    k = cost.shape[0]
    if method == "hungarian":
        rows, cols = linear_sum_assignment(cost)
        order = np.empty(k, dtype=np.int64)
        order[rows] = cols
        return order
    if method != "greedy":
        raise ContractError(f"unknown matching method {method!r}")
    order = np.full(k, -1, dtype=np.int64)
    remaining = cost.copy()
    for _ in range(k):
        i, j = np.unravel_index(np.argmin(remaining), remaining.shape)
        order[i] = j
        remaining[i, :] = np.inf
        remaining[:, j] = np.inf
    return order


def _check_compatible(a: GmmModel, b: GmmModel):
    if a.k != b.k or a.d != b.d:
        raise ContractError(f"models differ in shape: k={a.k},d={a.d} vs k={b.k},d={b.d}")


def parameter_errors(true_model: GmmModel, est_model: GmmModel, order):
    """Weight l1 error, per-component mean l2 errors and covariance Frobenius errors."""
    order = np.asarray(order)
    gamma = float(np.abs(est_model.weights[order] - true_model.weights).sum())
    mean_err = np.linalg.norm(est_model.means[order] - true_model.means, axis=1)
    cov_err = np.array([
        np.linalg.norm(est_model.covariance_matrix(order[i]) - true_model.covariance_matrix(i))
        for i in range(true_model.k)
    ])
    return gamma, mean_err, cov_err


def wasserstein_bound_value(gamma, alpha, R, sigma, d, z=2.0) -> float:
    """Closed form upper bound on W_z^z between a mixture and its estimate.

    2^(3z/2-2) g R^z + 2^(5z/2-2) g d^(z/2) s^z + 2^(3z/2-2) a^z + 2^(3z/2-2) d^(z/4) a^(z/2)
    """
    if not 1.0 <= z <= 2.0:
        raise ContractError(f"order z must lie in [1, 2], got {z}")
    c3 = 2.0 ** (1.5 * z - 2.0)
    c5 = 2.0 ** (2.5 * z - 2.0)
    return (c3 * gamma * R ** z + c5 * gamma * d ** (z / 2) * sigma ** z
            + c3 * alpha ** z + c3 * d ** (z / 4) * alpha ** (z / 2))


def gmm_wasserstein_bound(true_model: GmmModel, est_model: GmmModel, sep: SeparationSpec = None,
                          z=2.0, order=None, matching="greedy") -> float:
    """Upper bound on W_z^z(true, est) from matched parameter errors.

    alpha is the largest matched mean error or covariance Frobenius error,
    gamma the l1 weight error; R and sigma come from ``sep`` (derived from
    the true model when omitted).
    """
    _check_compatible(true_model, est_model)
    if order is None:
        order = match_components(true_model.means, est_model.means, matching)
    sep = sep or SeparationSpec.from_model(true_model)
    gamma, mean_err, cov_err = parameter_errors(true_model, est_model, order)
    alpha = float(max(mean_err.max(), cov_err.max()))
    return wasserstein_bound_value(gamma, alpha, sep.mean_diameter, sep.sigma_max, true_model.d, z)


def sliced_wasserstein1(X, Y, n_projections, rng) -> float:
    """Monte-Carlo sliced W1 between two equal-size samples."""
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape:
        raise ContractError("sliced W1 needs equal-size samples of equal dimension")
    theta = rng.normal(size=(X.shape[1], n_projections))
    theta /= np.linalg.norm(theta, axis=0, keepdims=True)
    px = np.sort(X @ theta, axis=0)
    py = np.sort(Y @ theta, axis=0)
    return float(np.abs(px - py).mean())


def gaussian_kl(mu1, cov1, mu2, cov2) -> float:
    """KL(N(mu1, cov1) || N(mu2, cov2)) in closed form."""
    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    s1 = np.diag(cov1) if np.ndim(cov1) == 1 else np.asarray(cov1, dtype=np.float64)
    s2 = np.diag(cov2) if np.ndim(cov2) == 1 else np.asarray(cov2, dtype=np.float64)
    d = mu1.shape[0]
    chol = np.linalg.cholesky(s2)
    solved = np.linalg.solve(chol, s1)
    trace = float(np.trace(np.linalg.solve(chol.T, solved)))
    diff = np.linalg.solve(chol, mu2 - mu1)
    _, logdet1 = np.linalg.slogdet(s1)
    logdet2 = 2.0 * float(np.log(np.diag(chol)).sum())
    return 0.5 * (trace + float(diff @ diff) - d + logdet2 - logdet1)


def tv_bound_gaussians(mu1, cov1, mu2, cov2, sigma_min) -> float:
    """Pinsker bound sqrt(KL / 2) on total variation, clamped to [0, 1].

    Both covariances must dominate ``sigma_min**2 * I``.
    """
    for cov in (cov1, cov2):
        cov = np.asarray(cov, dtype=np.float64)
        low = cov.min() if cov.ndim == 1 else np.linalg.eigvalsh(0.5 * (cov + cov.T)).min()
        if low < sigma_min ** 2 * (1 - 1e-12):
            raise ContractError(f"covariance eigenvalue {low} is below sigma_min^2 = {sigma_min ** 2}")
    kl = max(0.0, gaussian_kl(mu1, cov1, mu2, cov2))
    return min(1.0, math.sqrt(kl / 2.0))
