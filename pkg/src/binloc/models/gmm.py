"""Diagonal-covariance GMM baseline: one mixture per azimuth and band.

Mixtures are seeded by k-means (15 iterations) and refined by EM (5 iterations).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .. import NUM_AZIMUTHS

LOG_2PI = np.log(2.0 * np.pi)
VARIANCE_FLOOR_FRACTION = 1e-5


@dataclass
class DiagonalGmm:
    weights: np.ndarray    # (K,)
    means: np.ndarray      # (K, D)
    variances: np.ndarray  # (K, D)

    def component_log_density(self, x: np.ndarray) -> np.ndarray:
        """(n, K) log N(x | mu_k, diag var_k) + log w_k."""
        x = np.atleast_2d(x)
        d = x[:, None, :] - self.means[None]
        quad = np.sum(d * d / self.variances[None], axis=-1)
        logdet = np.sum(np.log(self.variances), axis=-1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw[None] - 0.5 * (quad + logdet[None] + x.shape[1] * LOG_2PI)

    def log_likelihood(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_density(x), axis=1)


def kmeans(x: np.ndarray, k: int, iterations: int, rng: np.random.Generator):
    """Lloyd's algorithm from k distinct random samples; empty clusters take the farthest point."""
    centers = x[rng.choice(len(x), size=k, replace=False)].copy()
    assign = np.zeros(len(x), dtype=np.int64)
    for _ in range(iterations):
        d2 = np.sum((x[:, None, :] - centers[None]) ** 2, axis=-1)
        assign = np.argmin(d2, axis=1)
        nearest = d2[np.arange(len(x)), assign]
        for j in range(k):
            members = assign == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(nearest))
                centers[j] = x[far]
                assign[far] = j
                nearest[far] = 0.0
    return centers, assign


def fit_diagonal_gmm(x, num_components: int = 16, kmeans_iterations: int = 15,
                     em_iterations: int = 5, rng: np.random.Generator | None = None,
                     variance_floor: np.ndarray | float | None = None):
    """Fit one mixture; returns (gmm, total log-likelihood before/after each EM step)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, dim = x.shape
    if n < num_components:
        raise ValueError(f"need at least {num_components} samples, got {n}")
    rng = rng or np.random.default_rng(0)
    if variance_floor is None:
        variance_floor = VARIANCE_FLOOR_FRACTION * x.var(axis=0)
    floor = np.maximum(np.broadcast_to(np.asarray(variance_floor, dtype=np.float64), (dim,)), 1e-12)

    centers, assign = kmeans(x, num_components, kmeans_iterations, rng)
    counts = np.bincount(assign, minlength=num_components).astype(np.float64)
    variances = np.empty_like(centers)
    for j in range(num_components):
        members = x[assign == j]
        variances[j] = members.var(axis=0) if len(members) > 1 else x.var(axis=0)
    gmm = DiagonalGmm(counts / n, centers, np.maximum(variances, floor))

    history = [float(gmm.log_likelihood(x).sum())]
    for _ in range(em_iterations):
        comp = gmm.component_log_density(x)
        resp = np.exp(comp - logsumexp(comp, axis=1, keepdims=True))
        nk = resp.sum(axis=0)
        alive = nk > 1e-10
        means = gmm.means.copy()
        variances = gmm.variances.copy()
        means[alive] = (resp.T @ x)[alive] / nk[alive, None]
        for j in np.flatnonzero(alive):
            d = x - means[j]
            variances[j] = resp[:, j] @ (d * d) / nk[j]
        gmm = DiagonalGmm(nk / n, means, np.maximum(variances, floor))
        history.append(float(gmm.log_likelihood(x).sum()))
    return gmm, history


@dataclass
class GmmBandModel:
    mixtures: list[DiagonalGmm]  # one per azimuth class
    band: int = 0
    variance_floor: np.ndarray | None = None

    def log_likelihoods(self, x) -> np.ndarray:
        return gmm_score(self, x)

    def posteriors(self, x) -> np.ndarray:
        ll = gmm_score(self, x)
        return np.exp(ll - logsumexp(ll, axis=-1, keepdims=True))


def gmm_train(x, azimuth_deg, num_components: int = 16, seed: int = 0, band: int = 0,
              kmeans_iterations: int = 15, em_iterations: int = 5, grid_step_deg: int = 5,
              num_classes: int = NUM_AZIMUTHS) -> tuple[GmmBandModel, list[list[float]]]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = (np.asarray(azimuth_deg) // grid_step_deg).astype(np.int64)
    floor = np.maximum(VARIANCE_FLOOR_FRACTION * x.var(axis=0), 1e-12)
    rng = np.random.default_rng(seed)
    mixtures, histories = [], []
    for c in range(num_classes):
        xc = x[y == c]
        if len(xc) < num_components:
            raise ValueError(f"band {band}: azimuth {c * grid_step_deg} has {len(xc)} samples, "
                             f"need {num_components}")
        g, h = fit_diagonal_gmm(xc, num_components, kmeans_iterations, em_iterations, rng, floor)
        mixtures.append(g)
        histories.append(h)
    return GmmBandModel(mixtures, band, floor), histories


def gmm_score(m: GmmBandModel, x) -> np.ndarray:
    """log p(x | azimuth) for every class; shape (72,) or (n, 72)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    out = np.stack([g.log_likelihood(x) for g in m.mixtures], axis=-1)
    return out[0] if single else out
